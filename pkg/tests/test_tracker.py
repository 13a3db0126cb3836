"""Online tracking loop tests: initialization paths, fallbacks, determinism,
and two trained smoke tests (static scene, occlusion decoupling)."""

import numpy as np
import pytest
import torch

from segtrack import tracker
from segtrack.errors import EmptyTarget
from segtrack.geometry import (
    BoxRole,
    SegmentationMask,
    extract_mask_region,
    extract_region,
    fit_axis_aligned_box,
)
from segtrack.metrics import box_iou, jaccard
from segtrack.pipeline import AblationFlags, NetworkBundle
from segtrack.synth import GeneratorParams, generate_sequence
from segtrack.training import TrainConfig, train_segmentation, train_sem


@pytest.fixture(scope="module")
def scene():
    return generate_sequence(GeneratorParams(n_frames=24), seed=40)


@pytest.fixture()
def bundle():
    torch.manual_seed(0)
    return NetworkBundle()


@pytest.fixture(scope="module")
def toy():
    """A briefly trained bundle plus its training sequences: enough competence
    for behavioral smoke tests, cheap enough for the suite."""
    plain = generate_sequence(GeneratorParams(n_frames=24), seed=40)
    occ = generate_sequence(GeneratorParams(n_frames=30, occlusion=True), seed=41)
    occ_long = generate_sequence(
        GeneratorParams(n_frames=30, occlusion=True, occlusion_window=(5, 25)), seed=43)
    torch.manual_seed(0)
    net = NetworkBundle()
    train_segmentation(net, [plain, occ, occ_long], TrainConfig(iterations=500, seed=0))
    train_sem(net, [plain, occ, occ_long], TrainConfig(iterations=700, seed=0))
    return {"bundle": net, "plain": plain, "occ": occ}


def test_initialize_requires_target(bundle, scene):
    with pytest.raises(EmptyTarget):
        tracker.initialize(bundle, scene.frames[0])
    with pytest.raises(EmptyTarget):
        tracker.initialize(bundle, scene.frames[0],
                           mask=np.zeros(scene.frames[0].shape[:2], dtype=np.float32))


def test_run_sequence_requires_frames(bundle, scene):
    with pytest.raises(EmptyTarget):
        tracker.run_sequence(bundle, [], init_mask=scene.masks[0])


def test_mask_init_prototype_count_matches_cells(bundle, scene):
    frame, mask = scene.frames[0], scene.masks[0].astype(np.float32)
    state = tracker.initialize(bundle, frame, mask=mask)
    box = fit_axis_aligned_box(mask)
    side = 4.0 * max(box.w, box.h)
    _, mapping = extract_region(frame, box.center, side, 128)
    patch_mask = extract_mask_region(mask, mapping, 128)
    cells = patch_mask.reshape(8, 16, 8, 16).mean(axis=(1, 3)) >= 0.5
    assert cells.any()
    assert state.gim_model.n_foreground == int(cells.sum())
    assert state.proxy_iterations == 0


def test_box_init_runs_exactly_one_proxy_iteration(bundle, scene):
    refines_before = bundle.refine_count
    state = tracker.initialize(bundle, scene.frames[0], box=scene.boxes[0])
    assert state.proxy_iterations == 1
    assert bundle.refine_count == refines_before + 1


def test_proxy_empty_falls_back_to_box_interior(bundle, scene, monkeypatch):
    def empty_segment(*args, **kwargs):
        return SegmentationMask(np.zeros((128, 128), dtype=np.float32),
                                coordinate_space="patch")

    monkeypatch.setattr("segtrack.refine.segment", empty_segment)
    state = tracker.initialize(bundle, scene.frames[0], box=scene.boxes[0])
    assert state.init_fallback
    assert state.proxy_iterations == 1
    # the fallback keeps the box-derived prototypes and a nonempty frame mask
    assert state.gim_model.n_foreground > 0
    assert (state.last_mask.probabilities >= 0.5).any()
    assert box_iou(state.visible_box, scene.boxes[0]) > 0.5


def test_mask_empty_step_falls_back_to_gem_peak(bundle, scene, monkeypatch):
    state = tracker.initialize(bundle, scene.frames[0], mask=scene.masks[0])
    prev_size = (state.visible_box.w, state.visible_box.h)
    real_forward = tracker.forward
    peak = (2, 6)

    def doctored(net, patch, gim_model):
        result = real_forward(net, patch, gim_model)
        result.mask = SegmentationMask(np.zeros((128, 128), dtype=np.float32),
                                       coordinate_space="patch")
        result.response = type(result.response)(values=result.response.values, peak=peak)
        return result

    monkeypatch.setattr(tracker, "forward", doctored)
    side = 4.0 * max(state.inherent_box.w, state.inherent_box.h)
    _, mapping = extract_region(scene.frames[1], state.position, side, 128)
    expected = tracker._peak_cell_to_frame(peak, mapping)
    _, visible, _, log = tracker.step(bundle, state, scene.frames[1])
    assert "mask_empty" in log["flags"]
    assert (visible.w, visible.h) == prev_size
    assert visible.center == pytest.approx(expected, abs=1e-6)


def test_no_sem_ties_inherent_to_visible(bundle, scene):
    bundle.flags = AblationFlags(no_sem=True)
    run = tracker.run_sequence(bundle, scene.frames[:5], init_mask=scene.masks[0])
    for visible, inherent in zip(run.visible_boxes[1:], run.inherent_boxes[1:]):
        assert inherent.as_tuple() == visible.as_tuple()
        assert inherent.role is BoxRole.INHERENT
        assert visible.role is BoxRole.VISIBLE


def test_search_side_always_from_inherent(bundle, scene):
    run = tracker.run_sequence(bundle, scene.frames[:8], init_mask=scene.masks[0])
    for prev, log in zip(run.logs[:-1], run.logs[1:]):
        _, _, w, h = prev["inherent_box"]
        assert log["search_side_source"] == "inherent"
        assert log["search_side"] == pytest.approx(4.0 * max(w, h))


def test_step_survives_blank_frame(bundle, scene):
    state = tracker.initialize(bundle, scene.frames[0], mask=scene.masks[0])
    blank = np.zeros_like(scene.frames[0])
    for _ in range(3):
        tracker.step(bundle, state, blank)  # must not raise


def test_static_scene_holds_init_box(toy):
    plain = toy["plain"]
    frames = [plain.frames[0]] * 6
    run = tracker.run_sequence(toy["bundle"], frames, init_mask=plain.masks[0])
    init_box = fit_axis_aligned_box(plain.masks[0].astype(np.float32))
    for box in run.visible_boxes:
        assert box_iou(box, init_box) >= 0.9


def test_box_init_tracks_after_training(toy):
    plain = toy["plain"]
    run = tracker.run_sequence(toy["bundle"], plain.frames, init_box=plain.boxes[0])
    assert not run.state.init_fallback
    overlaps = [jaccard(m.probabilities >= 0.5, g >= 0.5)
                for m, g in zip(run.masks, plain.masks)]
    assert float(np.mean(overlaps)) >= 0.7


def test_occlusion_decouples_inherent_from_visible(toy):
    occ = toy["occ"]
    run = tracker.run_sequence(toy["bundle"], occ.frames, init_mask=occ.masks[0])
    visible_area = np.array([b.area for b in run.visible_boxes])
    inherent_area = np.array([b.area for b in run.inherent_boxes])
    lo, hi = occ.params.n_frames // 3, 2 * occ.params.n_frames // 3
    # frame-over-frame changes from the last clear frame before the occluder
    # appears through the first clear frame after it leaves
    window = slice(lo - 1, hi)
    visible_change = np.abs(np.diff(visible_area))[window].sum()
    inherent_change = np.abs(np.diff(inherent_area))[window].sum()
    assert inherent_change < visible_change


def test_rerun_bit_identical(toy):
    plain = toy["plain"]
    first = tracker.run_sequence(toy["bundle"], plain.frames[:10], init_mask=plain.masks[0])
    second = tracker.run_sequence(toy["bundle"], plain.frames[:10], init_mask=plain.masks[0])
    for a, b in zip(first.visible_boxes, second.visible_boxes):
        assert a.as_tuple() == b.as_tuple()
    for a, b in zip(first.inherent_boxes, second.inherent_boxes):
        assert a.as_tuple() == b.as_tuple()
    for a, b in zip(first.masks, second.masks):
        assert np.array_equal(a.probabilities, b.probabilities)
