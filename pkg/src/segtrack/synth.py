"""Synthetic sequence generator.

Renders a textured deformable target moving over a textured static background,
optionally with a twin distractor (same colors and texture, independent
motion) and a one-off occlusion event: a dark striped wall sweeps in
diagonally from the upper left, eats the visible extent down to a small
lower-right remnant, holds there, and recedes instantly when the window ends.
The wall never swallows the target whole; a remnant floor keeps a few dozen
pixels visible on every frame. Masks are exact by construction; both the
visible mask and the full (pre-occlusion) extent are recorded so scale
supervision can target the inherent size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoForeground
from .geometry import BoundingBox, BoxRole, fit_axis_aligned_box

TWO_PI = 2.0 * math.pi

# occlusion sweep: leading fraction of the window spent ramping the wall in,
# and the smallest visible remnant (pixels) the wall ever leaves uncovered
OCC_RAMP_FRACTION = 0.5
OCC_MIN_VISIBLE = 48


@dataclass(frozen=True)
class GeneratorParams:
    resolution: tuple[int, int] = (128, 128)  # (h, w)
    n_frames: int = 32
    radius: float = 11.0
    radius_jitter: float = 0.2  # relative deformation amplitude
    deform_period: float = 19.0
    motion_period: float = 41.0
    distractor: bool = False
    occlusion: bool = False
    occlusion_window: tuple[int, int] | None = None  # defaults to middle third
    flyby_window: tuple[int, int] | None = None  # distractor close-approach frames
    growth: float = 0.0  # relative size increase over the whole sequence
    shape: str = "ellipse"  # or "box"

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.shape not in ("ellipse", "box"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.flyby_window is not None and not self.distractor:
            raise ValueError("flyby_window requires distractor=True")
        if self.growth <= -1.0:
            raise ValueError("growth must keep the radius positive")


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]  # (h, w, 3) float32 in [0, 1]
    masks: list[np.ndarray]  # visible target masks, bool
    boxes: list[BoundingBox]  # tight boxes of the visible masks
    inherent_boxes: list[BoundingBox]  # tight boxes of the full target extent
    all_objects_masks: list[np.ndarray]  # diagnostic: target + distractor, visible
    params: GeneratorParams
    seed: int

    def __len__(self) -> int:
        return len(self.frames)


def _texture(u, v, freqs, phases):
    return 0.5 + 0.5 * np.sin(TWO_PI * freqs[0] * u + phases[0]) * np.sin(TWO_PI * freqs[1] * v + phases[1])


def _object_mask(xx, yy, cx, cy, rx, ry, theta, shape):
    du = xx - cx
    dv = yy - cy
    u = math.cos(theta) * du + math.sin(theta) * dv
    v = -math.sin(theta) * du + math.cos(theta) * dv
    if shape == "box":
        return np.maximum(np.abs(u) / rx, np.abs(v) / ry) <= 1.0, (u, v)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0, (u, v)


def generate_sequence(params: GeneratorParams, seed: int) -> SyntheticSequence:
    """Deterministic sequence render; same (params, seed) gives identical bits."""
    rng = np.random.default_rng(seed)
    h, w = params.resolution
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    bg_color = rng.uniform(0.2, 0.45, size=3)
    bg_freqs = rng.uniform(0.04, 0.1, size=2)
    bg_phases = rng.uniform(0.0, TWO_PI, size=2)
    bg_pattern = _texture(xx, yy, bg_freqs, bg_phases)
    bg_noise = 0.02 * rng.standard_normal((h, w, 1))
    background = np.clip(bg_color + 0.1 * bg_pattern[..., None] + bg_noise, 0.0, 1.0)

    obj_color = rng.uniform(0.55, 0.9, size=3)
    obj_freqs = rng.uniform(0.12, 0.3, size=2)
    obj_phases = rng.uniform(0.0, TWO_PI, size=2)
    motion_phases = rng.uniform(0.0, TWO_PI, size=4)
    theta0 = rng.uniform(0.0, TWO_PI)
    omega = rng.uniform(-0.04, 0.04)

    # the distractor is an exact appearance twin: same colors, same texture.
    # Only its motion, deformation phase and spin direction differ, so nothing
    # but position history can tell the two apart.
    dis_phases = rng.uniform(0.0, TWO_PI, size=4)

    if params.occlusion_window is not None:
        occ_lo, occ_hi = params.occlusion_window
    else:
        occ_lo, occ_hi = params.n_frames // 3, 2 * params.n_frames // 3

    # target stays in the left part of the frame, the distractor in the right,
    # so their supports can never meet (their motion spans are disjoint)
    def target_center(t):
        cx = 0.34 * w + 0.08 * w * math.sin(TWO_PI * t / params.motion_period + motion_phases[0])
        cy = 0.50 * h + 0.14 * h * math.sin(TWO_PI * t / (params.motion_period * 0.73) + motion_phases[1])
        return cx, cy

    def scale_at(t):
        if params.n_frames < 2:
            return 1.0
        return 1.0 + params.growth * (t / (params.n_frames - 1))

    def distractor_center(t):
        cx = 0.80 * w + 0.05 * w * math.sin(TWO_PI * t / (params.motion_period * 1.21) + dis_phases[0])
        cy = 0.50 * h + 0.12 * h * math.sin(TWO_PI * t / (params.motion_period * 0.61) + dis_phases[1])
        if params.flyby_window is not None:
            fly_lo, fly_hi = params.flyby_window
            if fly_lo <= t < fly_hi:
                # the closest the twin may come: both extents at their largest
                # plus padding, so the two masks can never touch
                gap = 2.0 * params.radius * (1.0 + params.radius_jitter) * scale_at(t) + 6.0
                # smooth approach to a point right of the target, then return
                s = math.sin(math.pi * (t - fly_lo) / (fly_hi - fly_lo))
                tx, ty = target_center(t)
                cx = (1.0 - s) * cx + s * (tx + gap)
                cy = (1.0 - s) * cy + s * ty
        return cx, cy

    def radii(t, phase_a, phase_b):
        scale = scale_at(t)
        rx = scale * params.radius * (1.0 + params.radius_jitter * math.sin(TWO_PI * t / params.deform_period + phase_a))
        ry = scale * params.radius * (1.0 + params.radius_jitter * math.sin(TWO_PI * t / (params.deform_period * 1.31) + phase_b))
        return rx, ry

    frames, masks, boxes, inherent_boxes, all_objects = [], [], [], [], []
    for t in range(params.n_frames):
        frame = background.copy()
        theta = theta0 + omega * t

        cx, cy = target_center(t)
        rx, ry = radii(t, motion_phases[2], motion_phases[3])
        full_mask, (u, v) = _object_mask(xx, yy, cx, cy, rx, ry, theta, params.shape)
        pattern = _texture(u, v, obj_freqs, obj_phases)
        target_pixels = np.clip(obj_color + 0.22 * (pattern[..., None] - 0.5), 0.0, 1.0)
        frame[full_mask] = target_pixels[full_mask]

        dis_mask = np.zeros_like(full_mask)
        if params.distractor:
            dcx, dcy = distractor_center(t)
            drx, dry = radii(t, dis_phases[2], dis_phases[3])
            dis_mask, (du, dv) = _object_mask(xx, yy, dcx, dcy, drx, dry, -theta, params.shape)
            dis_pattern = _texture(du, dv, obj_freqs, obj_phases)
            dis_pixels = np.clip(obj_color + 0.22 * (dis_pattern[..., None] - 0.5), 0.0, 1.0)
            frame[dis_mask] = dis_pixels[dis_mask]

        occluded = np.zeros_like(full_mask)
        if params.occlusion and occ_lo <= t < occ_hi:
            # the wall front is placed per frame at a visible-area percentile:
            # the covered area ramps linearly to the deepest cut and the
            # remnant can never vanish, so the scale head always has a sliver
            # of evidence to hold on to
            u = (t - occ_lo) / (occ_hi - occ_lo)
            depth = min(u / OCC_RAMP_FRACTION, 1.0)
            diag = xx + yy
            dvals = np.sort(diag[full_mask])
            keep = int(round((1.0 - depth) * dvals.size))
            keep = min(max(keep, OCC_MIN_VISIBLE), dvals.size)
            occluded = diag < dvals[-keep]
            occ_pattern = 0.5 + 0.5 * np.sin(0.55 * (xx + yy))
            occ_pixels = np.clip(0.02 + 0.06 * occ_pattern[..., None], 0.0, 1.0)
            frame[occluded] = occ_pixels[occluded]

        visible = full_mask & ~occluded
        if not visible.any():
            raise NoForeground(f"generator produced an empty mask at frame {t}")
        frames.append(frame.astype(np.float32))
        masks.append(visible)
        boxes.append(fit_axis_aligned_box(visible.astype(np.float32)))
        inherent_boxes.append(
            fit_axis_aligned_box(full_mask.astype(np.float32), role=BoxRole.INHERENT))
        all_objects.append(visible | (dis_mask & ~occluded))

    return SyntheticSequence(frames=frames, masks=masks, boxes=boxes,
                             inherent_boxes=inherent_boxes, all_objects_masks=all_objects,
                             params=params, seed=seed)


def benchmark_sequence(seed: int = 0, n_frames: int = 200) -> SyntheticSequence:
    """The fixed tracking benchmark: translating/deforming target that grows
    over the sequence, one sweeping occlusion event around the half point,
    and a twin distractor that brushes past the target afterwards."""
    occ_window = (int(0.45 * n_frames), int(0.55 * n_frames))
    fly_window = (int(0.64 * n_frames), int(0.84 * n_frames))
    params = GeneratorParams(n_frames=n_frames, distractor=True, occlusion=True,
                             occlusion_window=occ_window, flyby_window=fly_window,
                             growth=0.4)
    return generate_sequence(params, seed)
