"""Synthetic sequence generator tests."""

import numpy as np
import pytest
from scipy import ndimage

from segtrack.synth import GeneratorParams, benchmark_sequence, generate_sequence


def test_same_seed_bit_identical():
    params = GeneratorParams(n_frames=8, distractor=True, occlusion=True)
    a = generate_sequence(params, seed=7)
    b = generate_sequence(params, seed=7)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa, fb)
    for ma, mb in zip(a.masks, b.masks):
        assert np.array_equal(ma, mb)


def test_different_seed_differs():
    params = GeneratorParams(n_frames=2)
    a = generate_sequence(params, seed=1)
    b = generate_sequence(params, seed=2)
    assert not np.array_equal(a.frames[0], b.frames[0])


def test_every_mask_nonempty():
    params = GeneratorParams(n_frames=40, occlusion=True, distractor=True)
    seq = generate_sequence(params, seed=3)
    assert len(seq) == 40
    for mask in seq.masks:
        assert mask.any()


def test_frames_are_normalized_float():
    seq = generate_sequence(GeneratorParams(n_frames=2), seed=0)
    frame = seq.frames[0]
    assert frame.dtype == np.float32
    assert frame.shape == (128, 128, 3)
    assert frame.min() >= 0.0 and frame.max() <= 1.0
    assert seq.masks[0].dtype == np.bool_


def test_distractor_gives_two_components():
    params = GeneratorParams(n_frames=12, distractor=True)
    seq = generate_sequence(params, seed=5)
    for mask in seq.all_objects_masks:
        _, count = ndimage.label(mask)
        assert count == 2


def test_distractor_never_touches_target():
    params = GeneratorParams(n_frames=12, distractor=True)
    seq = generate_sequence(params, seed=5)
    for visible, both in zip(seq.masks, seq.all_objects_masks):
        distractor = both & ~visible
        assert distractor.any()
        # dilating the target by one pixel must not reach the distractor
        grown = ndimage.binary_dilation(visible)
        assert not (grown & distractor).any()


def test_flyby_approaches_but_stays_disjoint():
    params = GeneratorParams(n_frames=40, distractor=True, flyby_window=(10, 30))
    seq = generate_sequence(params, seed=9)
    dists = []
    for t in range(len(seq)):
        target = seq.masks[t]
        distractor = seq.all_objects_masks[t] & ~target
        _, count = ndimage.label(seq.all_objects_masks[t])
        assert count == 2
        ty, tx = np.argwhere(target).mean(axis=0)
        dy, dx = np.argwhere(distractor).mean(axis=0)
        dists.append(float(np.hypot(ty - dy, tx - dx)))
    # closest approach happens inside the window and comes well within the
    # tracker's search-region radius, yet never makes contact
    assert 10 <= int(np.argmin(dists)) < 30
    assert min(dists) < 40.0
    assert min(dists[:10]) > min(dists)


def test_flyby_requires_distractor():
    with pytest.raises(ValueError):
        GeneratorParams(flyby_window=(1, 2))


def test_occlusion_shrinks_visible_not_inherent():
    params = GeneratorParams(n_frames=30, occlusion=True)
    seq = generate_sequence(params, seed=11)
    lo, hi = 10, 20  # default window: middle third
    mid = (lo + hi) // 2
    # the wall eats into the visible extent along both axes
    assert seq.boxes[mid].w < seq.inherent_boxes[mid].w
    assert seq.boxes[mid].h < seq.inherent_boxes[mid].h
    # outside the window the two boxes coincide
    assert seq.boxes[0].as_tuple() == seq.inherent_boxes[0].as_tuple()
    assert seq.boxes[-1].as_tuple() == seq.inherent_boxes[-1].as_tuple()
    # the visible mask loses most of its pixels during the event
    assert (seq.masks[mid] >= 0.5).sum() < 0.6 * (seq.masks[0] >= 0.5).sum()


def test_occlusion_sweep_ramps_and_keeps_remnant():
    params = GeneratorParams(n_frames=30, occlusion=True)
    seq = generate_sequence(params, seed=11)
    lo, hi = 10, 20
    areas = np.array([int(m.sum()) for m in seq.masks])
    # the wall never swallows the target whole
    assert areas.min() >= 48
    # the cut ramps in over the first half of the window and holds deep
    assert areas[lo] > 0.9 * areas[lo - 1]
    assert areas[lo + 2] < areas[lo]
    assert areas[hi - 1] < 0.35 * areas[lo]
    # release is instant: the frame after the window is back to full extent
    assert areas[hi] > 0.8 * areas[hi - 1 - (hi - lo)]


def test_occlusion_wall_is_darker_than_scene():
    occluded = generate_sequence(GeneratorParams(n_frames=30, occlusion=True), seed=11)
    clear = generate_sequence(GeneratorParams(n_frames=30), seed=11)
    mid = 15
    hidden = clear.masks[mid] & ~occluded.masks[mid]
    assert hidden.any()
    # wall pixels sit strictly below every pixel of the unoccluded scene, so
    # the occluder is never confusable with background or object texture
    assert occluded.frames[mid][hidden].max() < clear.frames[mid].min()


def test_box_shape_supported():
    seq = generate_sequence(GeneratorParams(n_frames=2, shape="box"), seed=1)
    assert seq.masks[0].any()
    with pytest.raises(ValueError):
        GeneratorParams(shape="triangle")


def test_growth_scales_inherent_size():
    params = GeneratorParams(n_frames=20, growth=0.5)
    seq = generate_sequence(params, seed=13)
    first = seq.inherent_boxes[0]
    last = seq.inherent_boxes[-1]
    # deformation wobbles sizes by +-20%, growth adds +50% on top
    assert last.w * last.h > 1.3 * first.w * first.h
    with pytest.raises(ValueError):
        GeneratorParams(growth=-1.0)


def test_distractor_matches_target_appearance():
    params = GeneratorParams(n_frames=4, distractor=True)
    seq = generate_sequence(params, seed=5)
    frame = seq.frames[0]
    target = seq.masks[0]
    distractor = seq.all_objects_masks[0] & ~target
    # twin palette: per-channel means agree closely even though the patches
    # are sampled at different texture phases
    t_mean = frame[target].mean(axis=0)
    d_mean = frame[distractor].mean(axis=0)
    assert np.abs(t_mean - d_mean).max() < 0.08


def test_benchmark_sequence_fixed_layout():
    seq = benchmark_sequence(seed=0, n_frames=50)
    assert len(seq) == 50
    assert seq.params.distractor and seq.params.occlusion
    assert seq.params.occlusion_window == (22, 27)
    assert seq.params.flyby_window == (32, 42)
    assert seq.params.growth == 0.4
