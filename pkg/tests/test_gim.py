import numpy as np
import pytest
import torch

from segtrack.errors import EmptyBackground, EmptyForeground, ShapeMismatch
from segtrack.geometry import BoundingBox
from segtrack.gim import (
    GimModel,
    GimNet,
    SimilarityDecoder,
    box_to_cell_mask,
    build_model,
    compute_channels,
    posterior,
    raw_similarities,
    similarity_channel,
)


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return GimNet(in_channels=128)


def test_reduce_shapes(net):
    out = net.reduce_features(torch.randn(1, 128, 24, 24))
    assert out.shape == (1, 64, 24, 24)
    out = net.reduce_features(torch.randn(1, 128, 5, 9))
    assert out.shape == (1, 64, 5, 9)


def test_reduce_zero_input_nonnegative(net):
    out = net.reduce_features(torch.zeros(1, 128, 6, 6))
    assert float(out.min()) >= 0.0
    # interior cells all see the same clamped bias response (border differs via padding)
    interior = out[:, :, 1:-1, 1:-1]
    assert torch.allclose(interior, interior[:, :, :1, :1].expand_as(interior), atol=1e-7)


def test_build_model_counts():
    feats = torch.randn(1, 64, 24, 24)
    mask = torch.zeros(24, 24, dtype=torch.bool)
    rng = np.random.default_rng(1)
    cells = rng.choice(24 * 24, size=10, replace=False)
    mask.view(-1)[torch.from_numpy(cells)] = True
    model = build_model(feats, mask=mask)
    assert model.n_foreground == 10
    assert model.n_background > 0


def test_build_model_prototypes_bit_exact():
    feats = torch.randn(1, 64, 8, 8)
    mask = torch.zeros(8, 8, dtype=torch.bool)
    mask[2, 3] = True
    mask[5, 6] = True
    model = build_model(feats, mask=mask)
    assert torch.equal(model.foreground[0], feats[0, :, 2, 3])
    assert torch.equal(model.foreground[1], feats[0, :, 5, 6])


def test_build_model_all_foreground_falls_back_then_raises():
    feats = torch.randn(1, 64, 6, 6)
    with pytest.raises(EmptyBackground):
        build_model(feats, mask=torch.ones(6, 6, dtype=torch.bool))
    # one free cell: the fallback picks it up
    mask = torch.ones(6, 6, dtype=torch.bool)
    mask[0, 0] = False
    model = build_model(feats, mask=mask)
    assert model.n_background == 1


def test_build_model_empty_foreground():
    with pytest.raises(EmptyForeground):
        build_model(torch.randn(1, 64, 6, 6), mask=torch.zeros(6, 6, dtype=torch.bool))


def test_build_model_from_box():
    feats = torch.randn(1, 64, 16, 16)
    model = build_model(feats, box=BoundingBox(4, 6, 3, 2))
    assert model.n_foreground == 6  # 3x2 cell block


def test_box_to_cell_mask():
    mask = box_to_cell_mask(BoundingBox(4, 6, 3, 2), 16, 16)
    rows, cols = torch.nonzero(mask, as_tuple=True)
    assert rows.min() == 6 and rows.max() == 7
    assert cols.min() == 4 and cols.max() == 6


def test_raw_similarity_identical_vector():
    feats = torch.zeros(1, 4, 2, 2)
    v = torch.tensor([1.0, 2.0, 3.0, 4.0])
    feats[0, :, 0, 0] = v
    sims = raw_similarities(feats, v[None])
    assert abs(float(sims[0, 0]) - 1.0) < 1e-5


def test_raw_similarity_hand_value():
    feats = torch.zeros(1, 2, 1, 1)
    feats[0, :, 0, 0] = torch.tensor([3.0, 4.0])
    sims = raw_similarities(feats, torch.tensor([[4.0, 3.0]]))
    assert abs(float(sims[0, 0]) - 24.0 / 25.0) < 1e-5


def test_raw_similarities_bounded():
    torch.manual_seed(2)
    feats = torch.randn(1, 64, 8, 8)
    protos = torch.randn(40, 64)
    sims = raw_similarities(feats, protos)
    assert float(sims.max()) <= 1.0 + 1e-6
    assert float(sims.min()) >= -1.0 - 1e-6


def test_zero_feature_gives_near_zero_similarity():
    feats = torch.zeros(1, 64, 2, 2)
    protos = torch.randn(5, 64)
    sims = raw_similarities(feats, protos)
    assert float(sims.abs().max()) < 1e-6


def test_permutation_invariance(net):
    torch.manual_seed(3)
    feats = torch.randn(1, 64, 12, 12)
    protos = torch.randn(20, 64)
    out1 = similarity_channel(feats, protos, net.decoder)
    perm = torch.randperm(20)
    out2 = similarity_channel(feats, protos[perm], net.decoder)
    assert float((out1 - out2).abs().max()) <= 1e-6


def test_similarity_padding_with_few_prototypes(net):
    torch.manual_seed(4)
    feats = torch.randn(1, 64, 3, 3)
    proto = torch.randn(1, 64)
    out = similarity_channel(feats, proto, net.decoder)
    sims = raw_similarities(feats, proto).clamp(-1, 1)
    padded = torch.cat([sims, torch.full((9, 2), -1.0)], dim=1)
    expected = net.decoder(padded).reshape(3, 3)
    assert torch.allclose(out, expected, atol=1e-7)


def test_posterior_properties():
    f = torch.randn(6, 6)
    p = posterior(f, f.clone())
    assert torch.allclose(p[0], torch.full((6, 6), 0.5), atol=1e-7)

    p = posterior(f + 20.0, f)
    assert float(p[0].min()) >= 1.0 - 1e-8

    torch.manual_seed(5)
    p = posterior(torch.randn(6, 6), torch.randn(6, 6))
    assert float((p.sum(dim=0) - 1.0).abs().max()) <= 1e-6
    with pytest.raises(ShapeMismatch):
        posterior(torch.zeros(3, 3), torch.zeros(4, 4))


def test_compute_channels_shapes(net):
    torch.manual_seed(6)
    feats = torch.randn(1, 64, 8, 8)
    model = GimModel(foreground=torch.randn(4, 64), background=torch.randn(9, 64))
    triplet = compute_channels(net, model, feats)
    assert triplet.F.shape == (8, 8)
    assert triplet.B.shape == (8, 8)
    assert triplet.P.shape == (2, 8, 8)


def test_decoder_gradient_matches_finite_differences():
    torch.manual_seed(7)
    dec = SimilarityDecoder(n_top=5).double()
    x = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
    dec(x).sum().backward()
    analytic = x.grad.clone()

    eps = 1e-6
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp = x.detach().clone()
                xm = x.detach().clone()
                xp[i, j] += eps
                xm[i, j] -= eps
                numeric[i, j] = (dec(xp).sum() - dec(xm).sum()) / (2 * eps)
    rel = float((analytic - numeric).norm() / (numeric.norm() + 1e-12))
    assert rel < 1e-3


def test_decoder_parameter_gradient_matches_finite_differences():
    torch.manual_seed(8)
    dec = SimilarityDecoder(n_top=5).double()
    x = torch.randn(6, 5, dtype=torch.float64)
    dec(x).sum().backward()
    for name, param in dec.named_parameters():
        analytic = param.grad.reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = param.data.reshape(-1)
        eps = 1e-6
        with torch.no_grad():
            for k in range(flat.numel()):
                orig = float(flat[k])
                flat[k] = orig + eps
                up = float(dec(x).sum())
                flat[k] = orig - eps
                down = float(dec(x).sum())
                flat[k] = orig
                numeric[k] = (up - down) / (2 * eps)
        rel = float((analytic - numeric).norm() / (numeric.norm() + 1e-12))
        assert rel < 1e-3, name
