"""Prototype-matching appearance model.

Foreground and background feature vectors collected on the first frame are
matched against every search-region cell by normalized dot product. The sorted
top similarities are decoded into per-pixel foreground (F) and background (B)
channels by a tiny shared MLP, and a softmax over the two gives the posterior P.
Spatial layout of the prototypes is discarded on purpose, which makes the
channels invariant to target deformation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from .errors import EmptyBackground, EmptyForeground, ShapeMismatch
from .geometry import BoundingBox

EPS_NORM = 1e-8
DEFAULT_TOP_N = 3
PAD_SIMILARITY = -1.0


@dataclass
class GimModel:
    """Unordered prototype sets gathered from the reference frame."""

    foreground: torch.Tensor  # (N_F, C) raw feature vectors
    background: torch.Tensor  # (N_B, C)

    def __post_init__(self):
        if self.foreground.ndim != 2 or self.foreground.shape[0] == 0:
            raise EmptyForeground("foreground prototype set is empty")
        if self.background.ndim != 2 or self.background.shape[0] == 0:
            raise EmptyBackground("background prototype set is empty")
        if not bool(torch.isfinite(self.foreground).all() and torch.isfinite(self.background).all()):
            raise ValueError("prototypes must be finite")

    @property
    def n_foreground(self) -> int:
        return int(self.foreground.shape[0])

    @property
    def n_background(self) -> int:
        return int(self.background.shape[0])


class ChannelTriplet(NamedTuple):
    F: torch.Tensor  # (H, W) foreground similarity
    B: torch.Tensor  # (H, W) background similarity
    P: torch.Tensor  # (2, H, W) posterior, channel 0 = foreground


class SimilarityDecoder(nn.Module):
    """MLP turning the sorted top-N similarities into one score per pixel."""

    def __init__(self, n_top: int = DEFAULT_TOP_N, hidden: int = 16):
        super().__init__()
        self.n_top = n_top
        self.net = nn.Sequential(nn.Linear(n_top, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, 1))

    def forward(self, top_sims: torch.Tensor) -> torch.Tensor:
        return self.net(top_sims).squeeze(-1)


class GimNet(nn.Module):
    """Feature reduction to 64 channels plus the shared similarity decoder."""

    def __init__(self, in_channels: int = 128, n_top: int = DEFAULT_TOP_N):
        super().__init__()
        self.n_top = n_top
        self.reduce = nn.Sequential(
            nn.Conv2d(in_channels, 64, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, 64, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.decoder = SimilarityDecoder(n_top)

    def reduce_features(self, deep_features: torch.Tensor) -> torch.Tensor:
        return self.reduce(deep_features)


def box_to_cell_mask(box: BoundingBox, rows: int, cols: int) -> torch.Tensor:
    """Cells whose center falls inside the box, as a boolean (rows, cols) grid."""
    rr = torch.arange(rows, dtype=torch.float32).view(-1, 1) + 0.5
    cc = torch.arange(cols, dtype=torch.float32).view(1, -1) + 0.5
    inside_y = (rr >= box.y) & (rr < box.y + box.h)
    inside_x = (cc >= box.x) & (cc < box.x + box.w)
    return inside_y & inside_x


def build_model(seg_features: torch.Tensor, mask=None, box: BoundingBox | None = None,
                neighborhood_factor: float = 4.0, detach: bool = True) -> GimModel:
    """Gather prototypes: foreground from the mask (or box interior), background
    from the surrounding neighborhood scaled by neighborhood_factor, falling back
    to the entire remaining grid when that neighborhood holds no background cell.

    detach=False keeps the gather differentiable so training reaches the
    feature extractor through the prototypes.
    """
    feats = seg_features[0] if seg_features.ndim == 4 else seg_features  # (C, H, W)
    _, rows, cols = feats.shape
    if mask is None:
        if box is None:
            raise ValueError("either mask or box must be given")
        fg = box_to_cell_mask(box, rows, cols)
    else:
        fg = torch.as_tensor(mask, dtype=torch.bool)
        if fg.shape != (rows, cols):
            raise ShapeMismatch(f"mask {tuple(fg.shape)} vs feature grid {(rows, cols)}")
    if not bool(fg.any()):
        raise EmptyForeground("no foreground cell in feature grid")

    fg_rows, fg_cols = torch.nonzero(fg, as_tuple=True)
    h = float(fg_rows.max() - fg_rows.min() + 1)
    w = float(fg_cols.max() - fg_cols.min() + 1)
    cy = float(fg_rows.float().mean()) + 0.5
    cx = float(fg_cols.float().mean()) + 0.5
    half_w = neighborhood_factor * w / 2.0
    half_h = neighborhood_factor * h / 2.0
    rr = torch.arange(rows, dtype=torch.float32).view(-1, 1) + 0.5
    cc = torch.arange(cols, dtype=torch.float32).view(1, -1) + 0.5
    near = (rr - cy).abs() <= half_h
    near = near & ((cc - cx).abs() <= half_w)
    bg = near & ~fg
    if not bool(bg.any()):
        bg = ~fg  # degenerate target: fall back to everything else
    if not bool(bg.any()):
        raise EmptyBackground("no background cell available")

    fg_vectors = feats[:, fg_rows, fg_cols].T
    bg_rows, bg_cols = torch.nonzero(bg, as_tuple=True)
    bg_vectors = feats[:, bg_rows, bg_cols].T
    if detach:
        fg_vectors = fg_vectors.detach()
        bg_vectors = bg_vectors.detach()
    return GimModel(foreground=fg_vectors, background=bg_vectors)


def _normalize(vectors: torch.Tensor) -> torch.Tensor:
    return vectors / (vectors.norm(dim=-1, keepdim=True) + EPS_NORM)


def raw_similarities(seg_features: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    """Normalized dot products between every cell and every prototype, (H*W, P)."""
    feats = seg_features[0] if seg_features.ndim == 4 else seg_features
    c, h, w = feats.shape
    cells = _normalize(feats.reshape(c, h * w).T)
    protos = _normalize(prototypes)
    return cells @ protos.T


def similarity_channel(seg_features: torch.Tensor, prototypes: torch.Tensor,
                       decoder: SimilarityDecoder, n_top: int | None = None) -> torch.Tensor:
    """Per-pixel similarity map: sorted descending top-N dot products, decoded."""
    n_top = decoder.n_top if n_top is None else n_top
    feats = seg_features[0] if seg_features.ndim == 4 else seg_features
    _, h, w = feats.shape
    sims = raw_similarities(feats, prototypes)
    if float(sims.detach().abs().max()) > 1.0 + 1e-4:
        raise ValueError("similarities escaped [-1, 1]; features not normalized?")
    sims = sims.clamp(-1.0, 1.0)
    sims = torch.sort(sims, dim=1, descending=True).values
    if sims.shape[1] < n_top:
        pad = sims.new_full((sims.shape[0], n_top - sims.shape[1]), PAD_SIMILARITY)
        sims = torch.cat([sims, pad], dim=1)
    return decoder(sims[:, :n_top]).reshape(h, w)


def posterior(f_channel: torch.Tensor, b_channel: torch.Tensor) -> torch.Tensor:
    """Two-channel softmax posterior; channel 0 is foreground."""
    if f_channel.shape != b_channel.shape:
        raise ShapeMismatch(f"{tuple(f_channel.shape)} vs {tuple(b_channel.shape)}")
    return torch.softmax(torch.stack([f_channel, b_channel]), dim=0)


def compute_channels(gim_net: GimNet, model: GimModel, seg_features: torch.Tensor) -> ChannelTriplet:
    """F, B and posterior P for one search region's reduced features."""
    f_chan = similarity_channel(seg_features, model.foreground, gim_net.decoder)
    b_chan = similarity_channel(seg_features, model.background, gim_net.decoder)
    return ChannelTriplet(F=f_chan, B=b_chan, P=posterior(f_chan, b_chan))
