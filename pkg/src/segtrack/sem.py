"""Scale estimation head.

Predicts the target's inherent size: a classification map locates the most
likely inherent center and four region channels carry signed offsets from each
cell to the box edges, so width and height fall out of edge-offset differences.
The mask predicted by the refinement pathway enters through a small adjustment
stack that brings it to feature resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonPositiveScale, ShapeMismatch
from .geometry import CoordinateMapping

STRIDE = 16
# region channel order: offsets to the top, bottom, right and left box edges,
# signed in patch pixels ("top" is the larger y offset so differences are positive)
CH_TOP, CH_BOTTOM, CH_RIGHT, CH_LEFT = 0, 1, 2, 3


class RegionChannels(NamedTuple):
    d_t: torch.Tensor
    d_b: torch.Tensor
    d_r: torch.Tensor
    d_l: torch.Tensor

    @classmethod
    def from_tensor(cls, region: torch.Tensor) -> "RegionChannels":
        r = region[0] if region.ndim == 4 else region
        return cls(r[CH_TOP], r[CH_BOTTOM], r[CH_RIGHT], r[CH_LEFT])


@dataclass
class ScaleEstimate:
    """Decoded inherent-scale hypothesis at the classification peak."""

    peak: tuple[int, int]  # (row, col) on the stride-16 grid
    width: float  # frame pixels
    height: float
    confidence: float  # foreground softmax at the peak


def _head(width: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(width, width, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(width, width, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(width, n_out, 1),
    )


class SemNet(nn.Module):
    """Template/search reductions, mask adjustment and the two prediction heads.

    The heads share an architecture (two 3x3 conv blocks then a 1x1 projection)
    but not weights. Template features are pooled to a single modulation vector
    multiplied into the search features before the mask features are joined.
    """

    def __init__(self, in_channels: int = 128, mask_channels: int = 64, width: int = 256):
        super().__init__()
        self.mask_channels = mask_channels
        self.template_reduce = nn.Sequential(nn.Conv2d(in_channels, width, 1), nn.ReLU(inplace=True))
        self.search_reduce = nn.Sequential(nn.Conv2d(in_channels, width, 1), nn.ReLU(inplace=True))
        self.mam = nn.Sequential(
            nn.Conv2d(1, 16, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, mask_channels, 3, stride=2, padding=1),
        )
        self.combine = nn.Sequential(nn.Conv2d(width + mask_channels, width, 1), nn.ReLU(inplace=True))
        self.cls_head = _head(width, 2)
        self.region_head = _head(width, 4)

    def adjust_mask(self, mask: torch.Tensor, use_mam: bool = True) -> torch.Tensor:
        """Mask features at stride 16. With use_mam=False the learned stack is
        replaced by a bilinear downsample tiled across the channel dimension."""
        if mask.ndim == 2:
            mask = mask[None, None]
        elif mask.ndim == 3:
            mask = mask[:, None]
        if use_mam:
            return self.mam(mask)
        grid = (mask.shape[-2] // STRIDE, mask.shape[-1] // STRIDE)
        small = F.interpolate(mask, size=grid, mode="bilinear", align_corners=False)
        return small.expand(-1, self.mask_channels, -1, -1)

    def predict(self, template_features: torch.Tensor, search_features: torch.Tensor,
                mask_features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Classification (2ch) and region (4ch, patch-pixel offsets) maps."""
        if search_features.shape[-2:] != mask_features.shape[-2:]:
            raise ShapeMismatch(
                f"search {tuple(search_features.shape[-2:])} vs mask {tuple(mask_features.shape[-2:])}")
        modulation = template_features.mean(dim=(-2, -1))
        x = search_features * modulation[..., None, None]
        x = self.combine(torch.cat([x, mask_features], dim=1))
        cls = self.cls_head(x)
        region = self.region_head(x) * float(STRIDE)
        return cls, region


def decode_scale(cls: torch.Tensor, region: torch.Tensor,
                 mapping: CoordinateMapping | None = None) -> ScaleEstimate:
    """Peak of the foreground softmax plus edge-offset differences at that peak.

    Width is d_right - d_left, height d_top - d_bottom, both converted to frame
    pixels through the mapping (identity when mapping is None).
    """
    c = cls[0] if cls.ndim == 4 else cls
    r = region[0] if region.ndim == 4 else region
    if c.shape[-2:] != r.shape[-2:]:
        raise ShapeMismatch(f"cls {tuple(c.shape[-2:])} vs region {tuple(r.shape[-2:])}")
    probs = torch.softmax(c, dim=0)
    fg = probs[0].detach().numpy()
    idx = int(np.argmax(fg))
    row, col = idx // fg.shape[1], idx % fg.shape[1]
    offsets = RegionChannels.from_tensor(r)
    width = float(offsets.d_r[row, col] - offsets.d_l[row, col])
    height = float(offsets.d_t[row, col] - offsets.d_b[row, col])
    if width <= 0.0 or height <= 0.0:
        raise NonPositiveScale(f"decoded extent {width}x{height} at {(row, col)}")
    sx = mapping.scale_x if mapping is not None else 1.0
    sy = mapping.scale_y if mapping is not None else 1.0
    return ScaleEstimate(
        peak=(row, col),
        width=width * float(sx),
        height=height * float(sy),
        confidence=float(fg[row, col]),
    )
