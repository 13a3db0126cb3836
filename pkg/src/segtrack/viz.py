"""Figures and overlays.

Report figures (loss curves, success plots) go through matplotlib with the Agg
backend. Frame overlays are composed directly in numpy so their pixels are
bit-deterministic across runs: mask alpha blend, solid outline for the visible
box, dashed outline for the inherent box.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import success_auc

MASK_COLOR = (1.0, 0.2, 0.2)
MASK_ALPHA = 0.45
VISIBLE_COLOR = (1.0, 1.0, 0.0)
INHERENT_COLOR = (0.2, 0.6, 1.0)
DASH_PERIOD = 6  # pixels on, then off, along the inherent-box outline


def loss_curves(histories: dict, path: str) -> None:
    """One log-scale loss trace per training phase."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, history in histories.items():
        ax.plot([r["iteration"] for r in history], [r["loss"] for r in history], label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def success_plot(overlaps, path: str) -> None:
    """Success rate against overlap threshold with the AUC in the legend."""
    thresholds = np.linspace(0.0, 1.0, 101)
    overlaps = np.asarray(list(overlaps), dtype=np.float64)
    rates = [(overlaps > t).mean() if len(overlaps) else 0.0 for t in thresholds]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(thresholds, rates, label=f"AUC {success_auc(overlaps):.3f}")
    ax.set_xlabel("overlap threshold")
    ax.set_ylabel("success rate")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def overlap_plot(overlaps, path: str, failures=()) -> None:
    """Per-frame overlap trace with failure frames marked."""
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(list(overlaps))
    for frame in failures:
        ax.axvline(frame, color="red", linestyle=":")
    ax.set_xlabel("frame")
    ax.set_ylabel("overlap")
    ax.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _draw_segment(out, rr, cc, color, dashed):
    if dashed:
        keep = (np.arange(len(rr)) // DASH_PERIOD) % 2 == 0
        rr, cc = rr[keep], cc[keep]
    out[rr, cc] = color


def _draw_box(out: np.ndarray, box, color, dashed: bool) -> None:
    h, w = out.shape[:2]
    x0 = int(np.clip(round(box.x), 0, w - 1))
    y0 = int(np.clip(round(box.y), 0, h - 1))
    x1 = int(np.clip(round(box.x + box.w), 0, w - 1))
    y1 = int(np.clip(round(box.y + box.h), 0, h - 1))
    xs = np.arange(x0, x1 + 1)
    ys = np.arange(y0, y1 + 1)
    color = np.asarray(color, dtype=np.float32)
    _draw_segment(out, np.full_like(xs, y0), xs, color, dashed)
    _draw_segment(out, np.full_like(xs, y1), xs, color, dashed)
    _draw_segment(out, ys, np.full_like(ys, x0), color, dashed)
    _draw_segment(out, ys, np.full_like(ys, x1), color, dashed)


def overlay_frame(frame: np.ndarray, mask=None, visible_box=None, inherent_box=None,
                  threshold: float = 0.5) -> np.ndarray:
    """Compose one annotated frame; returns float32 RGB in [0, 1]."""
    out = np.array(frame, dtype=np.float32, copy=True)
    if mask is not None:
        fg = np.asarray(mask) >= threshold
        if fg.any():
            color = np.asarray(MASK_COLOR, dtype=np.float32)
            out[fg] = (1.0 - MASK_ALPHA) * out[fg] + MASK_ALPHA * color
    if inherent_box is not None:
        _draw_box(out, inherent_box, INHERENT_COLOR, dashed=True)
    if visible_box is not None:
        _draw_box(out, visible_box, VISIBLE_COLOR, dashed=False)
    return np.clip(out, 0.0, 1.0)
