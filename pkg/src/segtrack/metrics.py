"""Evaluation metrics: Jaccard, contour F-measure, box IoU, success AUC, accuracy/robustness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch
from .geometry import BoundingBox

# failure rule approximating a reset protocol: overlap below FAIL_THRESHOLD
# for FAIL_CONSECUTIVE frames in a row
FAIL_THRESHOLD = 0.1
FAIL_CONSECUTIVE = 10

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SequenceResult:
    """Per-sequence tracking outcome used by the evaluation protocols."""

    overlaps: list[float]
    failures: list[int] = field(default_factory=list)
    masks: list | None = None
    boxes: list | None = None


def _as_binary(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    return arr >= 0.5


def jaccard(a, b) -> float:
    """Pixel intersection-over-union. Two empty masks agree perfectly and score 1."""
    a = _as_binary(a)
    b = _as_binary(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def mask_boundary(mask) -> np.ndarray:
    """4-connectivity boundary of a binary mask; image-border foreground counts."""
    m = _as_binary(mask)
    if not m.any():
        return np.zeros_like(m)
    eroded = ndimage.binary_erosion(m, structure=_CROSS, border_value=0)
    return m & ~eroded


def contour_f(a, b, tolerance: float = 1.0) -> float:
    """Harmonic mean of boundary precision and recall within a pixel tolerance."""
    a = _as_binary(a)
    b = _as_binary(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    ba = mask_boundary(a)
    bb = mask_boundary(b)
    if not ba.any() and not bb.any():
        return 1.0
    if not ba.any() or not bb.any():
        return 0.0
    dist_to_b = ndimage.distance_transform_edt(~bb)
    dist_to_a = ndimage.distance_transform_edt(~ba)
    precision = float((dist_to_b[ba] <= tolerance).mean())
    recall = float((dist_to_a[bb] <= tolerance).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return float(inter / union) if union > 0 else 0.0


def success_auc(overlaps) -> float:
    """Area under the success curve over thresholds 0.00, 0.01, ..., 1.00.

    Success at threshold t counts overlaps strictly greater than t, so an
    all-zero run scores 0 and a perfect run scores 100/101 (grid endpoint
    convention; within one grid step of the mean-overlap identity).
    """
    overlaps = np.asarray(list(overlaps), dtype=np.float64)
    if overlaps.size == 0:
        return 0.0
    thresholds = np.linspace(0.0, 1.0, 101)
    success = (overlaps[None, :] > thresholds[:, None]).mean(axis=1)
    return float(success.mean())


def accuracy_robustness(overlaps, threshold: float = FAIL_THRESHOLD, consecutive: int = FAIL_CONSECUTIVE):
    """Accuracy, robustness and failure events under the consecutive-low-overlap rule.

    A failure fires on the frame completing `consecutive` overlaps below
    `threshold` in a row. A is the mean overlap over frames before the first
    failure; R is the fraction of frames tracked before that failure.
    """
    overlaps = [float(v) for v in overlaps]
    failures = []
    run = 0
    for i, v in enumerate(overlaps):
        if v < threshold:
            run += 1
            if run == consecutive:
                failures.append(i)
                run = 0
        else:
            run = 0
    total = len(overlaps)
    if not failures:
        acc = float(np.mean(overlaps)) if overlaps else 0.0
        return acc, 1.0, failures
    frames_before = failures[0] + 1
    acc = float(np.mean(overlaps[:frames_before]))
    return acc, frames_before / total, failures
