"""Coordinate-frame primitives: masks, boxes, crops, distance channels, mappings."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRegion, NoForeground, PeakOutOfBounds

COORDINATE_SPACES = ("patch", "image")


class BoxRole(enum.Enum):
    VISIBLE = "visible"
    INHERENT = "inherent"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle (x, y, w, h) in pixel units with a role tag."""

    x: float
    y: float
    w: float
    h: float
    role: BoxRole = BoxRole.VISIBLE

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def with_role(self, role: BoxRole) -> "BoundingBox":
        return BoundingBox(self.x, self.y, self.w, self.h, role)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class SegmentationMask:
    """Per-pixel foreground probability map tied to a coordinate frame."""

    probabilities: np.ndarray
    coordinate_space: str = "patch"
    frame_id: int | None = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float32)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("mask must be a nonempty 2-D grid")
        if float(p.min()) < 0.0 or float(p.max()) > 1.0:
            raise ValueError("mask probabilities must lie in [0, 1]")
        if self.coordinate_space not in COORDINATE_SPACES:
            raise ValueError(f"unknown coordinate space {self.coordinate_space!r}")
        self.probabilities = p

    @property
    def shape(self) -> tuple[int, int]:
        return self.probabilities.shape

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return self.probabilities >= threshold


@dataclass(frozen=True)
class CoordinateMapping:
    """Affine map from patch coordinates to frame coordinates."""

    scale_x: float
    scale_y: float
    offset_x: float
    offset_y: float

    def __post_init__(self):
        if self.scale_x == 0.0 or self.scale_y == 0.0:
            raise ValueError("mapping scales must be nonzero")

    def to_frame(self, x, y):
        return x * self.scale_x + self.offset_x, y * self.scale_y + self.offset_y

    def to_patch(self, x, y):
        return (x - self.offset_x) / self.scale_x, (y - self.offset_y) / self.scale_y


@dataclass
class LocationChannel:
    """Normalized Euclidean distance map with its zero-valued peak."""

    values: np.ndarray
    peak: tuple[int, int]


def fit_axis_aligned_box(mask, threshold: float = 0.5, role: BoxRole = BoxRole.VISIBLE) -> BoundingBox:
    """Minimal axis-aligned box covering every pixel with probability >= threshold."""
    probs = mask.probabilities if isinstance(mask, SegmentationMask) else np.asarray(mask)
    hit = probs >= threshold
    if not hit.any():
        raise NoForeground(f"no pixel reaches threshold {threshold}")
    rows = np.flatnonzero(hit.any(axis=1))
    cols = np.flatnonzero(hit.any(axis=0))
    x, y = float(cols[0]), float(rows[0])
    return BoundingBox(x, y, float(cols[-1]) - x + 1.0, float(rows[-1]) - y + 1.0, role)


def euclidean_location_channel(peak, rows: int, cols: int) -> LocationChannel:
    """Distance-from-peak map normalized by the grid diagonal so values stay in [0, 1]."""
    pr, pc = int(peak[0]), int(peak[1])
    if not (0 <= pr < rows and 0 <= pc < cols):
        raise PeakOutOfBounds(f"peak ({pr}, {pc}) outside {rows}x{cols} grid")
    dr = np.arange(rows, dtype=np.float64)[:, None] - pr
    dc = np.arange(cols, dtype=np.float64)[None, :] - pc
    values = np.sqrt(dr * dr + dc * dc) / float(np.hypot(rows, cols))
    return LocationChannel(values.astype(np.float32), (pr, pc))


def _bilinear_sample(img: np.ndarray, ys, xs, fill: float | None = None) -> np.ndarray:
    """Sample img on the grid ys x xs. fill=None replicates edges, otherwise pads with fill."""
    img = np.asarray(img, dtype=np.float32)
    yy = np.asarray(ys, dtype=np.float64)[:, None]
    xx = np.asarray(xs, dtype=np.float64)[None, :]
    if fill is not None:
        pad = [(1, 1), (1, 1)] + [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, pad, constant_values=fill)
        yy = yy + 1.0
        xx = xx + 1.0
    h, w = img.shape[:2]
    yy = np.clip(yy, 0.0, h - 1.0)
    xx = np.clip(xx, 0.0, w - 1.0)
    y0 = np.floor(yy).astype(np.int64)
    x0 = np.floor(xx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yy - y0).astype(np.float32)
    fx = (xx - x0).astype(np.float32)
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def extract_region(frame, center, region_side: float, out_resolution: int):
    """Crop a square region around center and resample it to out_resolution².

    Out-of-frame area is filled by replicating edge pixels. Returns the patch and
    the CoordinateMapping that converts patch pixel coordinates to frame coordinates.
    """
    if region_side <= 0:
        raise DegenerateRegion(f"region side must be positive, got {region_side}")
    frame = np.asarray(frame, dtype=np.float32)
    cx, cy = float(center[0]), float(center[1])
    scale = float(region_side) / float(out_resolution)
    # patch pixel p samples the frame at p*scale + offset (pixel-center convention)
    offset_x = cx - region_side / 2.0 + 0.5 * scale - 0.5
    offset_y = cy - region_side / 2.0 + 0.5 * scale - 0.5
    xs = np.arange(out_resolution, dtype=np.float64) * scale + offset_x
    ys = np.arange(out_resolution, dtype=np.float64) * scale + offset_y
    patch = _bilinear_sample(frame, ys, xs)
    return patch, CoordinateMapping(scale, scale, offset_x, offset_y)


def extract_mask_region(values: np.ndarray, mapping: CoordinateMapping, out_resolution: int) -> np.ndarray:
    """Warp a frame-space mask into the patch defined by mapping, zero outside."""
    xs = np.arange(out_resolution, dtype=np.float64) * mapping.scale_x + mapping.offset_x
    ys = np.arange(out_resolution, dtype=np.float64) * mapping.scale_y + mapping.offset_y
    return np.clip(_bilinear_sample(np.asarray(values, dtype=np.float32), ys, xs, fill=0.0), 0.0, 1.0)


def map_mask_to_frame(mask: SegmentationMask, mapping: CoordinateMapping, frame_shape) -> SegmentationMask:
    """Resample a patch-space mask into full-image coordinates (zero outside the patch)."""
    if mask.coordinate_space != "patch":
        raise ValueError("mask must live in patch space")
    h, w = int(frame_shape[0]), int(frame_shape[1])
    xs = (np.arange(w, dtype=np.float64) - mapping.offset_x) / mapping.scale_x
    ys = (np.arange(h, dtype=np.float64) - mapping.offset_y) / mapping.scale_y
    values = _bilinear_sample(mask.probabilities, ys, xs, fill=0.0)
    return SegmentationMask(np.clip(values, 0.0, 1.0), coordinate_space="image", frame_id=mask.frame_id)
