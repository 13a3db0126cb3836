"""Online correlation-filter localiser.

Deep features are reduced to 256 channels and cross-correlated with a small
learned kernel; a parametric exponential-linear unit shapes the response. The
reduction, kernel, bias and activation are all fitted online by gradient
descent with backtracking acceptance against a target-centered Gaussian label,
which makes the recorded loss trace monotone non-increasing by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ChannelMismatch, NonFiniteLoss

KERNEL_SIZE = 4
LABEL_SIGMA_FACTOR = 0.25
WEIGHT_DECAY = 1e-4
MAX_BACKTRACKS = 30
LR_GROW = 1.25
LR_SHRINK = 0.5
LR_INIT = 1.0
LR_MAX = 1e4
INIT_STEPS = 30
UPDATE_STEPS = 2


@dataclass
class ResponseMap:
    """Correlation response grid with its argmax (ties: smallest row, then column)."""

    values: torch.Tensor
    peak: tuple[int, int]


class PeLU(nn.Module):
    """Parametric ELU: a*x/b for x >= 0, a*(exp(x/c) - 1) below. a, b, c trained."""

    def __init__(self):
        super().__init__()
        self.a = nn.Parameter(torch.ones(1))
        self.b = nn.Parameter(torch.ones(1))
        self.c = nn.Parameter(torch.ones(1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = self.b.clamp(min=1e-3)
        c = self.c.clamp(min=1e-3)
        # clamp keeps exp finite on the branch that where() discards
        neg = self.a * (torch.exp(x.clamp(max=0.0) / c) - 1.0)
        return torch.where(x >= 0, self.a * x / b, neg)


class DcfFilter(nn.Module):
    """Multi-channel spatial correlation kernel with scalar bias and PeLU output."""

    def __init__(self, channels: int = 256, kernel_size: int = KERNEL_SIZE):
        super().__init__()
        self.kernel = nn.Parameter(torch.randn(1, channels, kernel_size, kernel_size) * 1e-2)
        self.bias = nn.Parameter(torch.zeros(1))
        self.pelu = PeLU()

    def response(self, features: torch.Tensor) -> torch.Tensor:
        """Same-size correlation response. Padding convention: (k-1)//2 before,
        k//2 after on each axis, so response[r, c] correlates the window whose
        top-left sits at (r - (k-1)//2, c - (k-1)//2) in feature coordinates.
        """
        if features.shape[1] != self.kernel.shape[1]:
            raise ChannelMismatch(f"filter expects {self.kernel.shape[1]} channels, got {features.shape[1]}")
        k = self.kernel.shape[-1]
        lo, hi = (k - 1) // 2, k // 2
        padded = F.pad(features, (lo, hi, lo, hi))
        out = F.conv2d(padded, self.kernel) + self.bias
        return self.pelu(out)[0, 0]


class GemNet(nn.Module):
    """256-channel reduction plus the online DCF."""

    def __init__(self, in_channels: int = 128, channels: int = 256, kernel_size: int = KERNEL_SIZE):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, channels, 1)
        self.filter = DcfFilter(channels, kernel_size)
        self.step_lr = LR_INIT  # adaptive step size shared across online updates

    def reduce_features(self, deep_features: torch.Tensor) -> torch.Tensor:
        return self.reduce(deep_features)

    def trainable_parameters(self) -> list[torch.Tensor]:
        return [self.reduce.weight, self.reduce.bias, self.filter.kernel, self.filter.bias,
                self.filter.pelu.a, self.filter.pelu.b, self.filter.pelu.c]


def gaussian_label(center, size, rows: int, cols: int) -> torch.Tensor:
    """Gaussian regression target; sigma = 0.25 x size per axis, in feature cells."""
    cx, cy = float(center[0]), float(center[1])
    w, h = float(size[0]), float(size[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"label size must be positive, got {(w, h)}")
    sigma_x = LABEL_SIGMA_FACTOR * w
    sigma_y = LABEL_SIGMA_FACTOR * h
    rr = torch.arange(rows, dtype=torch.float32).view(-1, 1)
    cc = torch.arange(cols, dtype=torch.float32).view(1, -1)
    exponent = (rr - cy) ** 2 / (2.0 * sigma_y**2) + (cc - cx) ** 2 / (2.0 * sigma_x**2)
    return torch.exp(-exponent)


def localize(response) -> tuple[int, int]:
    """Argmax cell of a response map; ties resolved row-major (first occurrence)."""
    values = response.values if isinstance(response, ResponseMap) else response
    if isinstance(values, torch.Tensor):
        values = values.detach().numpy()
    values = np.asarray(values)
    idx = int(np.argmax(values))
    return (idx // values.shape[1], idx % values.shape[1])


def correlate(dcf: DcfFilter, features: torch.Tensor) -> ResponseMap:
    """Run the filter on reduced features and locate the peak."""
    with torch.no_grad():
        values = dcf.response(features)
    return ResponseMap(values=values, peak=localize(values))


def _objective(gem: GemNet, deep_features: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    reduced = gem.reduce(deep_features)
    resp = gem.filter.response(reduced)
    data = ((resp - label) ** 2).mean()
    reg = WEIGHT_DECAY * (gem.filter.kernel.pow(2).sum() + gem.reduce.weight.pow(2).sum())
    return data + reg


def _optimize(gem: GemNet, deep_features: torch.Tensor, label: torch.Tensor, steps: int) -> list[float]:
    """Backtracking gradient descent; accepts a step only if the loss does not rise."""
    params = gem.trainable_parameters()
    with torch.no_grad():
        current = float(_objective(gem, deep_features, label))
    if not math.isfinite(current):
        raise NonFiniteLoss(f"objective is {current} before optimization")
    history = [current]
    for _ in range(steps):
        loss = _objective(gem, deep_features, label)
        grads = torch.autograd.grad(loss, params)
        saved = [p.detach().clone() for p in params]
        lr = gem.step_lr
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            with torch.no_grad():
                for p, g, s in zip(params, grads, saved):
                    p.copy_(s - lr * g)
            with torch.no_grad():
                trial = float(_objective(gem, deep_features, label))
            if math.isfinite(trial) and trial <= current:
                accepted = True
                break
            lr *= LR_SHRINK
        if accepted:
            current = trial
            gem.step_lr = min(lr * LR_GROW, LR_MAX)
        else:
            with torch.no_grad():
                for p, s in zip(params, saved):
                    p.copy_(s)
            gem.step_lr = lr
        history.append(current)
    return history


def _template_init(gem: GemNet, deep_features: torch.Tensor, target_center) -> None:
    """Matched-filter start: the kernel becomes the normalized reduced-feature
    patch under the label peak, so the very first response already peaks on the
    target and the descent steps only have to suppress the background. A random
    kernel cannot be shaped into a localizer within the step budget once the
    encoder's feature magnitudes grow."""
    with torch.no_grad():
        reduced = gem.reduce(deep_features)
        rows, cols = reduced.shape[-2:]
        k = gem.filter.kernel.shape[-1]
        if rows < k or cols < k:
            return
        lo = (k - 1) // 2
        r0 = min(max(int(round(target_center[1])) - lo, 0), rows - k)
        c0 = min(max(int(round(target_center[0])) - lo, 0), cols - k)
        patch = reduced[:, :, r0 : r0 + k, c0 : c0 + k]
        gem.filter.kernel.copy_(patch / (patch.pow(2).sum() + 1e-8))
        gem.filter.bias.zero_()
        gem.filter.pelu.a.fill_(1.0)
        gem.filter.pelu.b.fill_(1.0)
        gem.filter.pelu.c.fill_(1.0)


def train_filter(gem: GemNet, deep_features: torch.Tensor, target_center, target_size,
                 steps: int = INIT_STEPS) -> list[float]:
    """First-frame fit of reduction + filter. Returns the recorded loss trace."""
    rows, cols = deep_features.shape[-2:]
    cx, cy = target_center
    if not (0 <= cx < cols and 0 <= cy < rows):
        raise ValueError(f"target center {target_center} outside {rows}x{cols} grid")
    label = gaussian_label(target_center, target_size, rows, cols)
    _template_init(gem, deep_features, target_center)
    gem.step_lr = LR_INIT
    return _optimize(gem, deep_features, label, steps)


def update_filter(gem: GemNet, deep_features: torch.Tensor, center, inherent_size,
                  steps: int = UPDATE_STEPS) -> list[float]:
    """Per-frame refresh with a label sized by the inherent (not visible) extent."""
    rows, cols = deep_features.shape[-2:]
    label = gaussian_label(center, inherent_size, rows, cols)
    return _optimize(gem, deep_features, label, steps)
