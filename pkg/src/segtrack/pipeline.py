"""Single-shot forward pass wiring the encoder, the two appearance models,
the refinement decoder and the scale head together, plus the ablation switchboard.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import torch
from torch import nn

from .backbone import Encoder, EncoderConfig, to_input_tensor
from .errors import BadResolution
from .gem import GemNet, ResponseMap, correlate
from .geometry import SegmentationMask, euclidean_location_channel
from .gim import GimModel, GimNet, compute_channels
from .refine import RefinementNet
from .sem import SemNet

STRIDE = 16


@dataclass(frozen=True)
class AblationFlags:
    """Module toggles mirroring the ablation variants; all off by default."""

    no_gim: bool = False
    no_gem: bool = False
    no_sem: bool = False
    no_attention: bool = False
    no_mask_in_sem: bool = False
    no_mam: bool = False

    @classmethod
    def valid_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_names(cls, names) -> "AblationFlags":
        names = [n for n in names if n]
        unknown = sorted(set(names) - set(cls.valid_names()))
        if unknown:
            raise ValueError(f"unknown ablation flags: {', '.join(unknown)}")
        return cls(**{n: True for n in names})

    def active(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]


class NetworkBundle(nn.Module):
    """All trainable parts under one module so checkpoints stay keyed by name."""

    def __init__(self, encoder_config: EncoderConfig | None = None,
                 flags: AblationFlags | None = None, gim_top_n: int = 3):
        super().__init__()
        self.encoder = Encoder(encoder_config)
        deep = self.encoder.config.widths[2]
        self.gim = GimNet(in_channels=deep, n_top=gim_top_n)
        self.gem = GemNet(in_channels=deep)
        self.refine = RefinementNet(
            skip8_channels=self.encoder.config.widths[1],
            skip4_channels=self.encoder.config.widths[0],
        )
        self.sem = SemNet(in_channels=deep)
        self.flags = flags or AblationFlags()
        self.encode_count = 0
        self.refine_count = 0


@dataclass
class ForwardResult:
    """Everything one forward pass produces, kept around for tests and tracking."""

    mask: SegmentationMask
    location: torch.Tensor  # (H, W) at stride 16
    similarity: torch.Tensor  # F channel
    posterior: torch.Tensor  # (2, H, W)
    response: ResponseMap | None
    levels: dict[int, torch.Tensor] = field(repr=False, default=None)


def center_prior_channel(rows: int, cols: int) -> torch.Tensor:
    """Stand-in location channel peaked at the grid center (no-GEM ablation)."""
    chan = euclidean_location_channel((rows // 2, cols // 2), rows, cols)
    return torch.from_numpy(chan.values)


def forward(bundle: NetworkBundle, patch, gim_model: GimModel | None) -> ForwardResult:
    """One single-shot pass over a search patch: channels, response, mask."""
    x = to_input_tensor(patch)
    if x.shape[-1] % STRIDE or x.shape[-2] % STRIDE:
        raise BadResolution(f"patch {tuple(x.shape[-2:])} not divisible by {STRIDE}")
    with torch.no_grad():
        levels = bundle.encoder(x)
        bundle.encode_count += 1
        deep = levels[16]
        rows, cols = deep.shape[-2:]

        if bundle.flags.no_gem:
            location = center_prior_channel(rows, cols)
            response = None
        else:
            reduced = bundle.gem.reduce_features(deep)
            response = correlate(bundle.gem.filter, reduced)
            location = torch.from_numpy(
                euclidean_location_channel(response.peak, rows, cols).values)

        if bundle.flags.no_gim or gim_model is None:
            similarity = torch.full((rows, cols), 0.5)
            posterior = torch.full((2, rows, cols), 0.5)
        else:
            seg_feats = bundle.gim.reduce_features(deep)
            triplet = compute_channels(bundle.gim, gim_model, seg_feats)
            similarity, posterior = triplet.F, triplet.P

        logits = bundle.refine(
            location[None, None], similarity[None, None], posterior[0][None, None],
            levels[8], levels[4], use_attention=not bundle.flags.no_attention)
        bundle.refine_count += 1
        probs = torch.softmax(logits, dim=1)

    mask = SegmentationMask(probs[0, 0].numpy(), coordinate_space="patch")
    return ForwardResult(mask=mask, location=location, similarity=similarity,
                         posterior=posterior, response=response, levels=levels)


def ablation_report(bundle_factory, sequences, variants=None, seed: int = 0) -> list[dict]:
    """Benchmark a set of ablation variants on the given sequences.

    bundle_factory(flags) must return a freshly initialized bundle sharing the
    same trained weights. Returns one row per variant with A, R, mean Jaccard
    and the A*R product.
    """
    from . import tracker as tracker_mod
    from .metrics import accuracy_robustness, jaccard

    if variants is None:
        variants = ["full", "no_gim", "no_gem", "no_sem", "no_attention", "no_mam"]
    rows = []
    for name in variants:
        flags = AblationFlags() if name == "full" else AblationFlags.from_names([name])
        bundle = bundle_factory(flags)
        overlaps_all = []
        jac_all = []
        failures_total = 0
        for seq in sequences:
            result = tracker_mod.run_sequence(bundle, seq.frames, init_mask=seq.masks[0], seed=seed)
            overlaps = [jaccard(m.probabilities >= 0.5, g >= 0.5)
                        for m, g in zip(result.masks, seq.masks)]
            acc, rob, failures = accuracy_robustness(overlaps)
            overlaps_all.append((acc, rob))
            jac_all.extend(overlaps)
            failures_total += len(failures)
        mean_a = sum(a for a, _ in overlaps_all) / len(overlaps_all)
        mean_r = sum(r for _, r in overlaps_all) / len(overlaps_all)
        rows.append({
            "variant": name,
            "accuracy": mean_a,
            "robustness": mean_r,
            "ar_product": mean_a * mean_r,
            "mean_jaccard": sum(jac_all) / len(jac_all),
            "failures": failures_total,
        })
    return rows
