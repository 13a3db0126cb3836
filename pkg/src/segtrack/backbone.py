"""Small convolutional encoder producing a fixed-stride feature pyramid.

Trained from random initialization together with the heads; the pyramid
contract (strides 4/8/16, configurable widths) is what downstream modules
depend on, not the particular stack used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import BadResolution

DEEPEST_STRIDE = 16
PYRAMID_STRIDES = (4, 8, 16)


@dataclass(frozen=True)
class EncoderConfig:
    """Channel widths at strides 4/8/16 plus the input channel count."""

    widths: tuple[int, int, int] = (32, 64, 128)
    in_channels: int = 3

    def __post_init__(self):
        if len(self.widths) != 3 or any(w <= 0 for w in self.widths):
            raise ValueError("widths must be three positive ints")


@dataclass
class FeaturePyramid:
    """Feature maps keyed by stride, all derived from one source image."""

    levels: dict[int, torch.Tensor]
    source_resolution: int

    def __getitem__(self, stride: int) -> torch.Tensor:
        return self.levels[stride]


class Encoder(nn.Module):
    """Four downsampling 3x3 conv blocks plus one refinement conv at stride 16."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        w4, w8, w16 = self.config.widths
        cin = self.config.in_channels
        self.stem = nn.Sequential(
            nn.Conv2d(cin, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, w4, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.down8 = nn.Sequential(
            nn.Conv2d(w4, w8, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.down16 = nn.Sequential(
            nn.Conv2d(w8, w16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w16, w16, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        h, w = x.shape[-2:]
        if h % DEEPEST_STRIDE or w % DEEPEST_STRIDE:
            raise BadResolution(f"input {h}x{w} not divisible by {DEEPEST_STRIDE}")
        f4 = self.stem(x)
        f8 = self.down8(f4)
        f16 = self.down16(f8)
        return {4: f4, 8: f8, 16: f16}


def to_input_tensor(patch) -> torch.Tensor:
    """Convert an H x W (x3) array in [0, 1] to a 1x3xHxW float tensor."""
    if isinstance(patch, torch.Tensor):
        t = patch.float()
        if t.ndim == 3 and t.shape[-1] in (1, 3):
            t = t.permute(2, 0, 1)
        if t.ndim == 2:
            t = t.unsqueeze(0).expand(3, -1, -1)
        if t.ndim == 3:
            t = t.unsqueeze(0)
        return t
    arr = np.asarray(patch, dtype=np.float32)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.shape[-1] == 1:
        arr = np.repeat(arr, 3, axis=-1)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def encode(encoder: Encoder, patch) -> FeaturePyramid:
    """Encode a single image into the stride-4/8/16 pyramid (inference only)."""
    x = to_input_tensor(patch)
    with torch.no_grad():
        levels = encoder(x)
    return FeaturePyramid(levels=levels, source_resolution=int(x.shape[-1]))
