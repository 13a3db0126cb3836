"""Online tracking loop: initialization, per-frame stepping, sequence driver.

The inherent-size box drives search-region sizing and the correlation-filter
label; the visible box is re-fitted to the predicted mask every frame. All
per-frame failure paths fall back to the previous state and are flagged, never
raised.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import gem as gem_mod
from . import gim as gim_mod
from . import refine as refine_mod
from . import sem as sem_mod
from .backbone import to_input_tensor
from .errors import EmptyTarget, NoForeground, NonFiniteLoss, NonPositiveScale
from .geometry import (
    BoundingBox,
    BoxRole,
    CoordinateMapping,
    SegmentationMask,
    euclidean_location_channel,
    extract_mask_region,
    extract_region,
    fit_axis_aligned_box,
    map_mask_to_frame,
)
from .pipeline import STRIDE, NetworkBundle, forward


@dataclass(frozen=True)
class TrackerConfig:
    patch_resolution: int = 128
    search_factor: float = 4.0
    mask_threshold: float = 0.5
    init_filter_steps: int = 30
    update_filter_steps: int = 2
    sem_min_confidence: float = 0.5
    sem_scale_band: tuple[float, float] = (0.5, 2.0)


@dataclass
class TrackerState:
    inherent_box: BoundingBox
    visible_box: BoundingBox
    gim_model: gim_mod.GimModel
    template: torch.Tensor  # reduced init-frame features for the scale head
    last_mask: SegmentationMask
    frame_index: int
    position: tuple[float, float]
    proxy_iterations: int = 0
    init_fallback: bool = False


@dataclass
class SequenceRun:
    masks: list[SegmentationMask] = field(default_factory=list)
    visible_boxes: list[BoundingBox] = field(default_factory=list)
    inherent_boxes: list[BoundingBox] = field(default_factory=list)
    flags: list[list[str]] = field(default_factory=list)
    logs: list[dict] = field(default_factory=list)
    state: TrackerState | None = None


def _grid(config: TrackerConfig) -> int:
    return config.patch_resolution // STRIDE


def _cells_center(mapping, position) -> tuple[float, float]:
    px, py = mapping.to_patch(position[0], position[1])
    return px / STRIDE, py / STRIDE


def _cells_size(mapping, box) -> tuple[float, float]:
    return (max(box.w / (mapping.scale_x * STRIDE), 0.2),
            max(box.h / (mapping.scale_y * STRIDE), 0.2))


def _clip_cell(value: float, grid: int) -> float:
    return min(max(value, 0.0), grid - 1.0)


def _peak_cell_to_frame(peak, mapping) -> tuple[float, float]:
    px = (peak[1] + 0.5) * STRIDE - 0.5
    py = (peak[0] + 0.5) * STRIDE - 0.5
    return mapping.to_frame(px, py)


def initialize(bundle: NetworkBundle, frame, mask=None, box: BoundingBox | None = None,
               config: TrackerConfig | None = None) -> TrackerState:
    """Build the first-frame models from a mask or, via a one-iteration proxy
    mask bootstrap, from a bounding box."""
    config = config or TrackerConfig()
    grid = _grid(config)
    if mask is not None:
        mask_arr = np.asarray(mask, dtype=np.float32)
        if not (mask_arr >= config.mask_threshold).any():
            raise EmptyTarget("initialization mask has no foreground")
        target_box = fit_axis_aligned_box(mask_arr, config.mask_threshold)
    elif box is not None:
        target_box = box
    else:
        raise EmptyTarget("no initialization target given")

    side = config.search_factor * max(target_box.w, target_box.h)
    patch, mapping = extract_region(frame, target_box.center, side, config.patch_resolution)
    with torch.no_grad():
        levels = bundle.encoder(to_input_tensor(patch))
        bundle.encode_count += 1
        deep = levels[16]
        seg_feats = bundle.gim.reduce_features(deep)
        template = bundle.sem.template_reduce(deep).detach()

    proxy_iterations = 0
    init_fallback = False
    if mask is not None:
        patch_mask = extract_mask_region(mask_arr, mapping, config.patch_resolution)
        cells = _patch_cells(patch_mask, config.mask_threshold)
        gim_model = gim_mod.build_model(seg_feats, mask=torch.from_numpy(cells))
    else:
        x0, y0 = mapping.to_patch(box.x, box.y)
        cell_box = BoundingBox(x0 / STRIDE, y0 / STRIDE,
                               box.w / (mapping.scale_x * STRIDE),
                               box.h / (mapping.scale_y * STRIDE))
        gim_model = gim_mod.build_model(seg_feats, box=cell_box)
        # a single refinement pass turns the box into a proxy mask
        center_cell = (int(_clip_cell(cell_box.center[1], grid)),
                       int(_clip_cell(cell_box.center[0], grid)))
        location = torch.from_numpy(
            euclidean_location_channel(center_cell, grid, grid).values)
        with torch.no_grad():
            triplet = gim_mod.compute_channels(bundle.gim, gim_model, seg_feats)
            proxy = refine_mod.segment(
                bundle.refine, location[None, None], triplet.F[None, None],
                triplet.P[0][None, None], {8: levels[8], 4: levels[4]},
                use_attention=not bundle.flags.no_attention)
            bundle.refine_count += 1
        proxy_iterations = 1
        proxy_probs = proxy.probabilities
        if (proxy_probs >= config.mask_threshold).any():
            patch_mask = proxy_probs
            cells = _patch_cells(patch_mask, config.mask_threshold)
            gim_model = gim_mod.build_model(seg_feats, mask=torch.from_numpy(cells))
        else:
            # proxy diverged: fall back to the box interior as the mask
            init_fallback = True
            patch_mask = _box_fill_mask(cell_box, config.patch_resolution)
            cells = _patch_cells(patch_mask, config.mask_threshold)

    init_mask_patch = SegmentationMask(patch_mask, coordinate_space="patch")
    frame_mask = map_mask_to_frame(init_mask_patch, mapping, np.asarray(frame).shape[:2])
    try:
        visible = fit_axis_aligned_box(frame_mask, config.mask_threshold)
    except NoForeground:
        visible = target_box.with_role(BoxRole.VISIBLE)

    if not bundle.flags.no_gem:
        cx, cy = _cells_center(mapping, visible.center)
        gem_mod.train_filter(
            bundle.gem, deep,
            (_clip_cell(cx, grid), _clip_cell(cy, grid)),
            _cells_size(mapping, visible),
            steps=config.init_filter_steps)

    return TrackerState(
        inherent_box=visible.with_role(BoxRole.INHERENT),
        visible_box=visible.with_role(BoxRole.VISIBLE),
        gim_model=gim_model,
        template=template,
        last_mask=frame_mask,
        frame_index=0,
        position=visible.center,
        proxy_iterations=proxy_iterations,
        init_fallback=init_fallback,
    )


def _patch_cells(patch_mask: np.ndarray, threshold: float) -> np.ndarray:
    g = patch_mask.shape[0] // STRIDE
    blocks = patch_mask[: g * STRIDE, : g * STRIDE].reshape(g, STRIDE, g, STRIDE).mean(axis=(1, 3))
    cells = blocks >= threshold
    if not cells.any():
        idx = int(np.argmax(blocks))
        cells[idx // g, idx % g] = True
    return cells


def _box_fill_mask(cell_box: BoundingBox, resolution: int) -> np.ndarray:
    out = np.zeros((resolution, resolution), dtype=np.float32)
    x0 = int(max(cell_box.x * STRIDE, 0))
    y0 = int(max(cell_box.y * STRIDE, 0))
    x1 = int(min((cell_box.x + cell_box.w) * STRIDE, resolution))
    y1 = int(min((cell_box.y + cell_box.h) * STRIDE, resolution))
    out[y0:y1, x0:x1] = 1.0
    return out


def step(bundle: NetworkBundle, state: TrackerState, frame,
         config: TrackerConfig | None = None) -> tuple[SegmentationMask, BoundingBox, BoundingBox, dict]:
    """Track one frame. Returns the image-space mask, both boxes and a log record."""
    config = config or TrackerConfig()
    grid = _grid(config)
    flags: list[str] = []
    started = time.perf_counter()

    # the search region is always derived from the inherent box
    side = config.search_factor * max(state.inherent_box.w, state.inherent_box.h)
    patch, mapping = extract_region(frame, state.position, side, config.patch_resolution)
    result = forward(bundle, patch, state.gim_model)
    frame_shape = np.asarray(frame).shape[:2]
    frame_mask = map_mask_to_frame(result.mask, mapping, frame_shape)

    if result.response is not None:
        peak_frame = _peak_cell_to_frame(result.response.peak, mapping)
    else:
        peak_frame = state.position

    mask_empty = False
    try:
        visible = fit_axis_aligned_box(frame_mask, config.mask_threshold)
        position = visible.center
    except NoForeground:
        mask_empty = True
        flags.append("mask_empty")
        prev = state.visible_box
        visible = BoundingBox(peak_frame[0] - prev.w / 2.0, peak_frame[1] - prev.h / 2.0,
                              prev.w, prev.h)
        position = peak_frame

    inherent = state.inherent_box
    if bundle.flags.no_sem:
        inherent = BoundingBox(visible.x, visible.y, visible.w, visible.h, BoxRole.INHERENT)
    elif mask_empty:
        # an empty mask gives SEM nothing to read scale from; hold the size
        pass
    else:
        try:
            estimate = _run_sem(bundle, state, result, config, mapping)
            lo, hi = config.sem_scale_band
            ratio_w = estimate.width / state.inherent_box.w
            ratio_h = estimate.height / state.inherent_box.h
            if estimate.confidence < config.sem_min_confidence:
                flags.append("sem_low_confidence")
            elif not (lo <= ratio_w <= hi and lo <= ratio_h <= hi):
                flags.append("sem_out_of_band")
            else:
                inherent = BoundingBox(position[0] - estimate.width / 2.0,
                                       position[1] - estimate.height / 2.0,
                                       estimate.width, estimate.height, BoxRole.INHERENT)
        except NonPositiveScale:
            flags.append("sem_degenerate")
    if inherent is state.inherent_box:
        # hold previous size, re-center on the new position
        inherent = BoundingBox(position[0] - inherent.w / 2.0, position[1] - inherent.h / 2.0,
                               inherent.w, inherent.h, BoxRole.INHERENT)

    # never adapt the filter toward a frame where the target was not found;
    # that poisons the labels and the tracker cannot recover afterwards
    if not bundle.flags.no_gem and not mask_empty:
        cx, cy = _cells_center(mapping, position)
        try:
            gem_mod.update_filter(
                bundle.gem, result.levels[16],
                (_clip_cell(cx, grid), _clip_cell(cy, grid)),
                _cells_size(mapping, inherent),
                steps=config.update_filter_steps)
        except NonFiniteLoss:
            flags.append("gem_update_failed")

    state.visible_box = visible.with_role(BoxRole.VISIBLE)
    state.inherent_box = inherent
    state.position = position
    state.last_mask = frame_mask
    state.frame_index += 1

    log = {
        "frame": state.frame_index,
        "search_side": side,
        "search_side_source": "inherent",
        "visible_box": visible.as_tuple(),
        "inherent_box": inherent.as_tuple(),
        "flags": flags,
        "elapsed_s": time.perf_counter() - started,
    }
    return frame_mask, state.visible_box, state.inherent_box, log


def _run_sem(bundle: NetworkBundle, state: TrackerState, result, config: TrackerConfig,
             mapping: CoordinateMapping):
    with torch.no_grad():
        deep = result.levels[16]
        search = bundle.sem.search_reduce(deep)
        if bundle.flags.no_mask_in_sem:
            mask_in = torch.zeros(1, 1, config.patch_resolution, config.patch_resolution)
        else:
            mask_in = torch.from_numpy(result.mask.probabilities)[None, None]
        mask_feats = bundle.sem.adjust_mask(mask_in, use_mam=not bundle.flags.no_mam)
        cls, region = bundle.sem.predict(state.template, search, mask_feats)
    return sem_mod.decode_scale(cls, region, mapping)


def run_sequence(bundle: NetworkBundle, frames, init_mask=None, init_box=None,
                 config: TrackerConfig | None = None, seed: int = 0) -> SequenceRun:
    """Track a whole sequence. The online filter state is restored afterwards so
    repeated runs on the same bundle are reproducible."""
    if len(frames) < 1:
        raise EmptyTarget("need at least one frame")
    config = config or TrackerConfig()
    torch.manual_seed(seed)
    gem_snapshot = copy.deepcopy(bundle.gem.state_dict())
    lr_snapshot = bundle.gem.step_lr
    run = SequenceRun()
    try:
        state = initialize(bundle, frames[0], mask=init_mask, box=init_box, config=config)
        run.state = state
        run.masks.append(state.last_mask)
        run.visible_boxes.append(state.visible_box)
        run.inherent_boxes.append(state.inherent_box)
        init_flags = ["init_fallback"] if state.init_fallback else []
        run.flags.append(init_flags)
        run.logs.append({"frame": 0, "flags": init_flags,
                         "visible_box": state.visible_box.as_tuple(),
                         "inherent_box": state.inherent_box.as_tuple(),
                         "proxy_iterations": state.proxy_iterations})
        for frame in frames[1:]:
            mask, visible, inherent, log = step(bundle, state, frame, config)
            run.masks.append(mask)
            run.visible_boxes.append(visible)
            run.inherent_boxes.append(inherent)
            run.flags.append(log["flags"])
            run.logs.append(log)
    finally:
        bundle.gem.load_state_dict(gem_snapshot)
        bundle.gem.step_lr = lr_snapshot
    return run
