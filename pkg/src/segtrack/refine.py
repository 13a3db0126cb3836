"""Refinement decoder: fuse the L, F, P channels and upscale to a full-resolution mask.

Two upscaling stages pull in backbone skip connections (strides 8 and 4) whose
adjusted features pass through a channel-attention gate before summation. The
final stage doubles resolution once more with a single conv, and a bilinear
tail brings the two-class logits to patch resolution before the softmax.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatch
from .geometry import SegmentationMask

FUSED_CHANNELS = 64


class ChannelAttention(nn.Module):
    """Re-weight channels by a gated function of their spatial average.

    The gate is a sigmoid of a per-channel affine map of the pooled value,
    initialized to pass features through nearly unchanged.
    """

    def __init__(self, channels: int, gate_bias: float = 3.0):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(channels))
        self.bias = nn.Parameter(torch.full((channels,), gate_bias))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(-2, -1))
        gate = torch.sigmoid(pooled * self.weight + self.bias)
        return x * gate[..., None, None]


class UpscaleStage(nn.Module):
    """Nearest 2x upsample + two 3x3 convs, summed with gated skip features.

    The skip adjuster is bias-free so an all-zero skip contributes exactly
    nothing regardless of training state.
    """

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.adjust = nn.Conv2d(skip_channels, out_channels, 1, bias=False)
        self.attention = ChannelAttention(out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor, use_attention: bool = True) -> torch.Tensor:
        if skip.shape[-2] != 2 * x.shape[-2] or skip.shape[-1] != 2 * x.shape[-1]:
            raise ShapeMismatch(f"skip {tuple(skip.shape[-2:])} is not 2x input {tuple(x.shape[-2:])}")
        up = F.interpolate(x, scale_factor=2, mode="nearest")
        main = self.convs(up)
        adjusted = F.relu(self.adjust(skip))
        if use_attention:
            adjusted = self.attention(adjusted)
        return main + adjusted


class RefinementNet(nn.Module):
    """Decoder from stride-16 channels to a per-pixel two-class distribution."""

    def __init__(self, skip8_channels: int = 64, skip4_channels: int = 32,
                 stage1_channels: int = 32, stage2_channels: int = 16):
        super().__init__()
        self.fuse_conv = nn.Sequential(
            nn.Conv2d(3, FUSED_CHANNELS, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.stage1 = UpscaleStage(FUSED_CHANNELS, skip8_channels, stage1_channels)
        self.stage2 = UpscaleStage(stage1_channels, skip4_channels, stage2_channels)
        self.head = nn.Conv2d(stage2_channels, 2, 3, padding=1)

    def fuse(self, location: torch.Tensor, similarity: torch.Tensor, posterior_fg: torch.Tensor) -> torch.Tensor:
        """Concatenate the channels in fixed order (L, F, P) and mix to 64 channels."""
        stacked = _stack_channels(location, similarity, posterior_fg)
        return self.fuse_conv(stacked)

    def forward(self, location, similarity, posterior_fg, skip8, skip4,
                use_attention: bool = True) -> torch.Tensor:
        """Two-class logits at patch resolution (16x the stride-16 grid)."""
        fused = self.fuse(location, similarity, posterior_fg)
        x = self.stage1(fused, skip8, use_attention)
        x = self.stage2(x, skip4, use_attention)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        logits = self.head(x)
        return F.interpolate(logits, scale_factor=2, mode="bilinear", align_corners=False)


def _stack_channels(location, similarity, posterior_fg) -> torch.Tensor:
    maps = []
    for m in (location, similarity, posterior_fg):
        t = torch.as_tensor(m, dtype=torch.float32)
        if t.ndim == 2:
            t = t[None, None]
        elif t.ndim == 3:
            t = t[:, None]
        maps.append(t)
    shapes = {tuple(m.shape[-2:]) for m in maps}
    if len(shapes) != 1:
        raise ShapeMismatch(f"channel shapes differ: {sorted(shapes)}")
    return torch.cat(maps, dim=1)


def segment(net: RefinementNet, location, similarity, posterior_fg, pyramid,
            use_attention: bool = True) -> SegmentationMask:
    """Full-resolution foreground probability map for one search patch."""
    with torch.no_grad():
        logits = net(location, similarity, posterior_fg, pyramid[8], pyramid[4], use_attention)
        probs = torch.softmax(logits, dim=1)
    return SegmentationMask(probs[0, 0].numpy(), coordinate_space="patch")
