"""Supervised training on synthetic sequences.

Two phases: (1) segmentation, fitting the encoder, prototype matcher and
refinement decoder with crossentropy against ground-truth masks, and (2) scale
estimation, fitting the scale head with a classification loss at the inherent
center plus an L1 edge-offset loss inside the ground-truth box. The correlation
filter stays untouched here; it adapts online per sequence.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import gim as gim_mod
from .errors import NonFiniteLoss
from .geometry import extract_region, extract_mask_region, euclidean_location_channel
from .pipeline import NetworkBundle, STRIDE
from .synth import SyntheticSequence

STATIC_PAIR_FRACTION = 0.2  # share of same-frame pairs in each batch
SEM_REGION_LOSS_WEIGHT = 0.05
CLS_DISK_RADIUS = 1.5  # cells
CROP_SCALE_JITTER = (0.8, 1.3)  # train-crop side factor range, relative to 4x target size


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    iterations: int = 2000
    learning_rate: float = 1e-3
    decay_factor: float = 0.2
    decay_interval: int = 15  # epochs between decays
    epoch_iterations: int = 100  # iterations per epoch for the schedule
    pair_max_gap: int = 50
    perturbation_fraction: float = 0.125
    patch_resolution: int = 128
    seed: int = 0

    def __post_init__(self):
        positive = ("batch_size", "iterations", "learning_rate", "decay_factor",
                    "decay_interval", "epoch_iterations", "pair_max_gap", "patch_resolution")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.perturbation_fraction < 0.5):
            raise ValueError("perturbation_fraction must lie in [0, 0.5)")
        if self.patch_resolution % STRIDE:
            raise ValueError(f"patch_resolution must be divisible by {STRIDE}")


@dataclass
class TrainingRun:
    """Loss trace plus the final (or last good) resumable checkpoint."""

    history: list[dict] = field(default_factory=list)
    checkpoint: dict | None = None


def sample_pair(sequence: SyntheticSequence, rng: np.random.Generator,
                max_gap: int = 50) -> tuple[int, int]:
    """Uniform reference/train frame indices with |i - j| <= max_gap and i != j."""
    n = len(sequence)
    if n < 2:
        raise ValueError("sequence must hold at least two frames")
    i = int(rng.integers(0, n))
    lo = max(0, i - max_gap)
    hi = min(n - 1, i + max_gap)
    j = i
    while j == i:
        j = int(rng.integers(lo, hi + 1))
    return i, j


def perturb_location(center, size, rng: np.random.Generator,
                     fraction: float = 0.125) -> tuple[float, float]:
    """Shift each coordinate by U[-fraction*size, +fraction*size] of that axis."""
    w, h = (size, size) if np.isscalar(size) else (size[0], size[1])
    dx = float(rng.uniform(-fraction * w, fraction * w))
    dy = float(rng.uniform(-fraction * h, fraction * h))
    return (float(center[0]) + dx, float(center[1]) + dy)


def crop_sample(frame, mask, center, side, resolution):
    """Crop frame and mask around center; mask is zero-filled outside the frame."""
    patch, mapping = extract_region(frame, center, side, resolution)
    mask_patch = extract_mask_region(np.asarray(mask, dtype=np.float32), mapping, resolution)
    return patch, mask_patch, mapping


def cell_mask_from_patch(mask_patch: np.ndarray) -> np.ndarray:
    """Stride-16 cell foreground map: block mean >= 0.5, argmax fallback."""
    g = mask_patch.shape[0] // STRIDE
    blocks = mask_patch[: g * STRIDE, : g * STRIDE].reshape(g, STRIDE, g, STRIDE).mean(axis=(1, 3))
    cells = blocks >= 0.5
    if not cells.any():
        idx = int(np.argmax(blocks))
        cells[idx // g, idx % g] = True
    return cells


def _schedule_lr(config: TrainConfig, iteration: int) -> float:
    epoch = iteration // config.epoch_iterations
    return config.learning_rate * config.decay_factor ** (epoch // config.decay_interval)


def make_checkpoint(bundle: NetworkBundle, optimizer, iteration: int,
                    rng: np.random.Generator, phase: str) -> dict:
    return {
        "weights": {k: v.detach().clone() for k, v in bundle.state_dict().items()},
        # deep copy: the optimizer mutates its moment tensors in place
        "optimizer": copy.deepcopy(optimizer.state_dict()),
        "iteration": iteration,
        "numpy_rng": rng.bit_generator.state,
        "phase": phase,
    }


def _restore(bundle: NetworkBundle, optimizer, rng, checkpoint: dict) -> int:
    bundle.load_state_dict(checkpoint["weights"])
    optimizer.load_state_dict(checkpoint["optimizer"])
    rng.bit_generator.state = checkpoint["numpy_rng"]
    return int(checkpoint["iteration"])


def _pick_pair(sequences, rng, config) -> tuple[SyntheticSequence, int, int]:
    seq = sequences[int(rng.integers(0, len(sequences)))]
    if len(seq) < 2 or rng.random() < STATIC_PAIR_FRACTION:
        i = int(rng.integers(0, len(seq)))
        return seq, i, i
    i, j = sample_pair(seq, rng, config.pair_max_gap)
    return seq, i, j


def _prepare_sample(seq, i, j, rng, config):
    """Crop reference and train patches for one pair, with supervision targets."""
    res = config.patch_resolution
    ref_box = seq.inherent_boxes[i]
    side_ref = 4.0 * max(ref_box.w, ref_box.h)
    ref_patch, ref_mask, _ = crop_sample(seq.frames[i], seq.masks[i], ref_box.center, side_ref, res)

    box = seq.inherent_boxes[j]
    # jitter the crop scale so the nets tolerate the size drift an online
    # tracker feeds back through its search-region sizing
    side = 4.0 * max(box.w, box.h) * float(rng.uniform(*CROP_SCALE_JITTER))
    center = perturb_location(box.center, (box.w, box.h), rng, config.perturbation_fraction)
    patch, mask_patch, mapping = crop_sample(seq.frames[j], seq.masks[j], center, side, res)

    g = res // STRIDE
    true_cx, true_cy = mapping.to_patch(*box.center)
    peak_col = min(max(int(true_cx // STRIDE) + int(rng.integers(-1, 2)), 0), g - 1)
    peak_row = min(max(int(true_cy // STRIDE) + int(rng.integers(-1, 2)), 0), g - 1)
    location = euclidean_location_channel((peak_row, peak_col), g, g).values

    return {
        "ref_patch": ref_patch,
        "ref_cells": cell_mask_from_patch(ref_mask),
        "patch": patch,
        "mask": mask_patch,
        "location": location,
        "mapping": mapping,
        "inherent_box": box,
    }


def _to_batch(images) -> torch.Tensor:
    arr = np.stack([np.ascontiguousarray(im.transpose(2, 0, 1)) for im in images])
    return torch.from_numpy(arr)


def _train_loop(step_fn, params, bundle, config, rng, phase, resume=None) -> TrainingRun:
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    start = 0
    run = TrainingRun()
    if resume is not None:
        start = _restore(bundle, optimizer, rng, resume)
    last_good = None
    for iteration in range(start, config.iterations):
        lr = _schedule_lr(config, iteration)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss = step_fn(rng)
        loss_value = float(loss.detach())
        if not math.isfinite(loss_value):
            err = NonFiniteLoss(f"{phase} loss became {loss_value} at iteration {iteration}")
            err.checkpoint = last_good
            err.history = run.history
            raise err
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        run.history.append({"iteration": iteration, "loss": loss_value, "lr": lr})
        last_good = make_checkpoint(bundle, optimizer, iteration + 1, rng, phase)
    run.checkpoint = last_good or make_checkpoint(bundle, optimizer, start, rng, phase)
    return run


def train_segmentation(bundle: NetworkBundle, sequences, config: TrainConfig,
                       resume: dict | None = None) -> TrainingRun:
    """Fit encoder + prototype matcher + refinement with mask crossentropy."""
    rng = np.random.default_rng(config.seed)
    params = list(bundle.encoder.parameters()) + list(bundle.gim.parameters()) \
        + list(bundle.refine.parameters())

    def step(step_rng):
        samples = [_prepare_sample(*_pick_pair(sequences, step_rng, config), step_rng, config)
                   for _ in range(config.batch_size)]
        ref_levels = bundle.encoder(_to_batch([s["ref_patch"] for s in samples]))
        levels = bundle.encoder(_to_batch([s["patch"] for s in samples]))
        ref_seg = bundle.gim.reduce_features(ref_levels[16])
        seg = bundle.gim.reduce_features(levels[16])

        locations, similarities, posteriors = [], [], []
        for b, sample in enumerate(samples):
            model = gim_mod.build_model(ref_seg[b : b + 1],
                                        mask=torch.from_numpy(sample["ref_cells"]),
                                        detach=False)
            triplet = gim_mod.compute_channels(bundle.gim, model, seg[b : b + 1])
            locations.append(torch.from_numpy(sample["location"]))
            similarities.append(triplet.F)
            posteriors.append(triplet.P[0])
        logits = bundle.refine(
            torch.stack(locations)[:, None],
            torch.stack(similarities)[:, None],
            torch.stack(posteriors)[:, None],
            levels[8], levels[4])
        target = torch.from_numpy(
            np.stack([s["mask"] < 0.5 for s in samples]).astype(np.int64))
        return F.cross_entropy(logits, target)

    return _train_loop(step, params, bundle, config, rng, "segmentation", resume)


def _sem_targets(samples, grid: int):
    """Classification disk at the inherent center plus signed edge offsets."""
    cls_target = np.ones((len(samples), grid, grid), dtype=np.int64)  # 1 = background
    region_target = np.zeros((len(samples), 4, grid, grid), dtype=np.float32)
    inside = np.zeros((len(samples), 1, grid, grid), dtype=np.float32)
    centers_px = (np.arange(grid, dtype=np.float32) + 0.5) * STRIDE - 0.5
    px = centers_px[None, :]
    py = centers_px[:, None]
    for b, sample in enumerate(samples):
        box = sample["inherent_box"]
        mapping = sample["mapping"]
        x0, y0 = mapping.to_patch(box.x, box.y)
        x1, y1 = mapping.to_patch(box.x + box.w, box.y + box.h)
        ccx, ccy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        dist = np.sqrt((px - ccx) ** 2 + (py - ccy) ** 2) / STRIDE
        cls_target[b][dist <= CLS_DISK_RADIUS] = 0  # 0 = foreground
        region_target[b, 0] = y1 - py  # top: larger y offset
        region_target[b, 1] = y0 - py
        region_target[b, 2] = x1 - px
        region_target[b, 3] = x0 - px
        inside[b, 0] = ((px >= x0) & (px < x1) & (py >= y0) & (py < y1)).astype(np.float32)
    return (torch.from_numpy(cls_target), torch.from_numpy(region_target),
            torch.from_numpy(inside))


def _predicted_masks(bundle: NetworkBundle, samples, ref_levels, levels) -> torch.Tensor:
    """Masks from the frozen segmentation path, matching what SEM sees online."""
    ref_seg = bundle.gim.reduce_features(ref_levels[16])
    seg = bundle.gim.reduce_features(levels[16])
    locations, similarities, posteriors = [], [], []
    for b, sample in enumerate(samples):
        model = gim_mod.build_model(ref_seg[b : b + 1],
                                    mask=torch.from_numpy(sample["ref_cells"]))
        triplet = gim_mod.compute_channels(bundle.gim, model, seg[b : b + 1])
        locations.append(torch.from_numpy(sample["location"]))
        similarities.append(triplet.F)
        posteriors.append(triplet.P[0])
    logits = bundle.refine(
        torch.stack(locations)[:, None],
        torch.stack(similarities)[:, None],
        torch.stack(posteriors)[:, None],
        levels[8], levels[4])
    return torch.softmax(logits, dim=1)[:, 0]


def train_sem(bundle: NetworkBundle, sequences, config: TrainConfig,
              resume: dict | None = None) -> TrainingRun:
    """Fit the scale head on predicted masks; everything else is frozen."""
    rng = np.random.default_rng(config.seed + 1)
    grid = config.patch_resolution // STRIDE
    use_mask = not bundle.flags.no_mask_in_sem

    def step(step_rng):
        samples = [_prepare_sample(*_pick_pair(sequences, step_rng, config), step_rng, config)
                   for _ in range(config.batch_size)]
        with torch.no_grad():
            ref_levels = bundle.encoder(_to_batch([s["ref_patch"] for s in samples]))
            levels = bundle.encoder(_to_batch([s["patch"] for s in samples]))
            if use_mask:
                masks = _predicted_masks(bundle, samples, ref_levels, levels)
            else:
                masks = torch.zeros(len(samples), config.patch_resolution,
                                    config.patch_resolution)
        template = bundle.sem.template_reduce(ref_levels[16])
        search = bundle.sem.search_reduce(levels[16])
        mask_feats = bundle.sem.adjust_mask(masks, use_mam=not bundle.flags.no_mam)
        cls, region = bundle.sem.predict(template, search, mask_feats)
        cls_target, region_target, inside = _sem_targets(samples, grid)
        ce = F.cross_entropy(cls, cls_target)
        denom = inside.sum().clamp(min=1.0)
        l1 = (torch.abs(region - region_target) * inside).sum() / (denom * 4.0)
        return ce + SEM_REGION_LOSS_WEIGHT * l1

    return _train_loop(step, list(bundle.sem.parameters()), bundle, config, rng, "sem", resume)


def write_history(path, history) -> None:
    """Line-delimited loss records: iteration, loss, lr."""
    with open(path, "w", encoding="ascii") as fh:
        for record in history:
            fh.write(f"{record['iteration']},{record['loss']:.10g},{record['lr']:.10g}\n")
