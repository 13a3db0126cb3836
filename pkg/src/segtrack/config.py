"""Run configuration.

One JSON file drives training and tracking runs: network widths, tracker
thresholds, optimizer settings, the synthetic data recipe, ablation switches
and the seed. Unknown keys are rejected so typos fail loudly instead of
silently falling back to defaults. SEGTRACK_SEED in the environment overrides
the configured seed.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .backbone import EncoderConfig
from .errors import UnknownConfigKey
from .pipeline import AblationFlags, NetworkBundle
from .synth import GeneratorParams, SyntheticSequence, benchmark_sequence, generate_sequence
from .tracker import TrackerConfig
from .training import TrainConfig

SEED_ENV_VAR = "SEGTRACK_SEED"

DEFAULT_DATA = (
    {"preset": "benchmark", "seed": 0},
    {"seed": 17, "n_frames": 48},
    {"seed": 23, "n_frames": 48, "shape": "box"},
    {"seed": 29, "n_frames": 48, "occlusion": True, "occlusion_window": [12, 36]},
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    ablate: tuple[str, ...] = ()
    encoder_widths: tuple[int, int, int] = (32, 64, 128)
    gim_top_n: int = 3
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    sem_iterations: int | None = None  # defaults to training.iterations
    data: tuple[dict, ...] = DEFAULT_DATA

    def __post_init__(self):
        AblationFlags.from_names(self.ablate)  # validates the names

    def flags(self) -> AblationFlags:
        return AblationFlags.from_names(self.ablate)

    def train_config(self, phase: str = "segmentation") -> TrainConfig:
        base = dataclasses.replace(self.training, seed=self.seed)
        if phase == "sem" and self.sem_iterations is not None:
            return dataclasses.replace(base, iterations=self.sem_iterations)
        return base


def _check_keys(given: dict, allowed, context: str) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise UnknownConfigKey(f"unknown config key {context}{unknown[0]!r}")


def _sub_config(cls, raw: dict, context: str):
    names = [f.name for f in dataclasses.fields(cls)]
    _check_keys(raw, names, context)
    coerced = {}
    for key, value in raw.items():
        coerced[key] = tuple(value) if isinstance(value, list) else value
    return cls(**coerced)


def _check_data_entry(entry: dict, index: int) -> None:
    allowed = {f.name for f in dataclasses.fields(GeneratorParams)} | {"seed", "preset"}
    _check_keys(entry, allowed, f"data[{index}].")


def from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from parsed JSON, applying defaults for missing keys."""
    _check_keys(raw, [f.name for f in dataclasses.fields(RunConfig)], "")
    kwargs = dict(raw)
    if "ablate" in kwargs:
        kwargs["ablate"] = tuple(kwargs["ablate"])
    if "encoder_widths" in kwargs:
        kwargs["encoder_widths"] = tuple(kwargs["encoder_widths"])
    if "tracker" in kwargs:
        kwargs["tracker"] = _sub_config(TrackerConfig, kwargs["tracker"], "tracker.")
    if "training" in kwargs:
        kwargs["training"] = _sub_config(TrainConfig, kwargs["training"], "training.")
    if "data" in kwargs:
        entries = tuple(kwargs["data"])
        for i, entry in enumerate(entries):
            _check_data_entry(entry, i)
        kwargs["data"] = entries
    return RunConfig(**kwargs)


def load_config(path: str | None) -> RunConfig:
    """Read a JSON config (None for all defaults); SEGTRACK_SEED wins over the file."""
    if path is None:
        config = RunConfig()
    else:
        with open(path, encoding="utf-8") as fh:
            config = from_dict(json.load(fh))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        config = dataclasses.replace(config, seed=int(env_seed))
    return config


def resolved_dict(config: RunConfig) -> dict:
    """Fully resolved settings for embedding in run summaries."""
    out = dataclasses.asdict(config)
    out["sem_iterations"] = (config.sem_iterations if config.sem_iterations is not None
                             else config.training.iterations)
    return out


def build_bundle(config: RunConfig) -> NetworkBundle:
    encoder_config = EncoderConfig(widths=config.encoder_widths)
    return NetworkBundle(encoder_config=encoder_config, flags=config.flags(),
                         gim_top_n=config.gim_top_n)


def build_sequences(config: RunConfig) -> list[SyntheticSequence]:
    """Instantiate the synthetic corpus named by the data section."""
    sequences = []
    for entry in config.data:
        entry = dict(entry)
        seed = int(entry.pop("seed", 0))
        if entry.pop("preset", None) == "benchmark":
            sequences.append(benchmark_sequence(seed))
            continue
        for key in ("occlusion_window", "flyby_window", "resolution"):
            if key in entry and entry[key] is not None:
                entry[key] = tuple(entry[key])
        sequences.append(generate_sequence(GeneratorParams(**entry), seed))
    return sequences
