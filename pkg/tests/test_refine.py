import numpy as np
import pytest
import torch

from segtrack.backbone import Encoder, encode
from segtrack.errors import ShapeMismatch
from segtrack.refine import ChannelAttention, RefinementNet, UpscaleStage, segment


@pytest.fixture(scope="module")
def net():
    torch.manual_seed(0)
    return RefinementNet()


def random_inputs(grid=8, seed=1):
    torch.manual_seed(seed)
    loc = torch.rand(1, 1, grid, grid)
    sim = torch.randn(1, 1, grid, grid)
    post = torch.rand(1, 1, grid, grid)
    skip8 = torch.randn(1, 64, grid * 2, grid * 2)
    skip4 = torch.randn(1, 32, grid * 4, grid * 4)
    return loc, sim, post, skip8, skip4


def test_fuse_output_channels(net):
    loc, sim, post, _, _ = random_inputs(grid=24)
    fused = net.fuse(loc, sim, post)
    assert fused.shape == (1, 64, 24, 24)


def test_fuse_shape_mismatch(net):
    with pytest.raises(ShapeMismatch):
        net.fuse(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 9, 8))


def test_fuse_order_sensitive_and_deterministic(net):
    loc, sim, post, _, _ = random_inputs()
    a = net.fuse(loc, sim, post)
    b = net.fuse(loc, sim, post)
    assert torch.equal(a, b)
    swapped = net.fuse(post, sim, loc)
    assert not torch.allclose(a, swapped)


def test_channel_attention_zero_channel_stays_zero():
    torch.manual_seed(2)
    att = ChannelAttention(4, gate_bias=0.0)
    x = torch.randn(1, 4, 6, 6)
    x[:, 2] = 0.0
    out = att(x)
    assert torch.equal(out[:, 2], torch.zeros(1, 6, 6))
    assert out.shape == x.shape


def test_channel_attention_pooling_linear():
    x = torch.randn(1, 3, 5, 5)
    pooled = x.mean(dim=(-2, -1))
    doubled = (2.0 * x).mean(dim=(-2, -1))
    assert torch.equal(doubled, 2.0 * pooled)


def test_channel_attention_near_identity_at_init():
    att = ChannelAttention(8)
    x = torch.randn(2, 8, 4, 4)
    # fresh gates open to ~0.95, so features pass through almost unscaled
    assert torch.allclose(att(x), x, rtol=0.05, atol=0.01)


def test_upscale_stage_shapes():
    torch.manual_seed(3)
    stage = UpscaleStage(16, 8, 12)
    x = torch.randn(1, 16, 24, 24)
    skip = torch.randn(1, 8, 48, 48)
    out = stage(x, skip)
    assert out.shape == (1, 12, 48, 48)
    with pytest.raises(ShapeMismatch):
        stage(x, torch.randn(1, 8, 47, 48))


def test_upscale_stage_zero_skip_is_identity_on_main_path():
    torch.manual_seed(4)
    stage = UpscaleStage(16, 8, 12)
    x = torch.randn(1, 16, 8, 8)
    zero_skip = torch.zeros(1, 8, 16, 16)
    out = stage(x, zero_skip)
    import torch.nn.functional as F

    main = stage.convs(F.interpolate(x, scale_factor=2, mode="nearest"))
    assert torch.equal(out, main)


def test_attention_toggle_matches_plain_sum():
    torch.manual_seed(5)
    stage = UpscaleStage(16, 8, 12)
    # make the gate matter so the toggle is observable
    with torch.no_grad():
        stage.attention.bias.fill_(-1.0)
    x = torch.randn(1, 16, 8, 8)
    skip = torch.randn(1, 8, 16, 16)
    gated = stage(x, skip, use_attention=True)
    plain = stage(x, skip, use_attention=False)
    import torch.nn.functional as F

    main = stage.convs(F.interpolate(x, scale_factor=2, mode="nearest"))
    adjusted = F.relu(stage.adjust(skip))
    assert torch.equal(plain, main + adjusted)
    assert not torch.allclose(gated, plain)


def test_forward_shape_trace(net):
    loc, sim, post, skip8, skip4 = random_inputs(grid=8)
    logits = net(loc, sim, post, skip8, skip4)
    assert logits.shape == (1, 2, 128, 128)


def test_segment_through_pyramid():
    torch.manual_seed(6)
    enc = Encoder()
    net = RefinementNet()
    pyr = encode(enc, np.random.default_rng(0).random((128, 128, 3)).astype(np.float32))
    grid = 8
    loc = torch.rand(1, 1, grid, grid)
    sim = torch.randn(1, 1, grid, grid)
    post = torch.rand(1, 1, grid, grid)
    mask = segment(net, loc, sim, post, pyr)
    assert mask.shape == (128, 128)
    assert mask.coordinate_space == "patch"
    with torch.no_grad():
        probs = torch.softmax(net(loc, sim, post, pyr[8], pyr[4]), dim=1)
    total = probs.sum(dim=1)
    assert float((total - 1.0).abs().max()) <= 1e-6


def test_gradient_reaches_every_parameter_group(net):
    loc, sim, post, skip8, skip4 = random_inputs(seed=7)
    logits = net(loc, sim, post, skip8, skip4)
    loss = logits.square().mean()
    net.zero_grad()
    loss.backward()
    groups = {
        "fuse": net.fuse_conv,
        "stage1": net.stage1.convs,
        "stage1_adjust": net.stage1.adjust,
        "stage1_attention": net.stage1.attention,
        "stage2": net.stage2.convs,
        "stage2_adjust": net.stage2.adjust,
        "stage2_attention": net.stage2.attention,
        "head": net.head,
    }
    for name, module in groups.items():
        norm = sum(float(p.grad.norm()) for p in module.parameters() if p.grad is not None)
        assert norm > 0.0, name


def test_short_overfit_reduces_loss():
    torch.manual_seed(8)
    net = RefinementNet()
    loc, sim, post, skip8, skip4 = random_inputs(seed=8)
    target = torch.zeros(1, 32, 32, dtype=torch.long)
    target[:, 8:24, 8:24] = 1
    target = torch.nn.functional.interpolate(
        target[None].float(), scale_factor=4, mode="nearest"
    )[0].long()
    optimizer = torch.optim.Adam(net.parameters(), lr=1e-2)
    losses = []
    for _ in range(40):
        logits = net(loc, sim, post, skip8, skip4)
        loss = torch.nn.functional.cross_entropy(logits, target)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
    assert losses[-1] < 0.7 * losses[0]
