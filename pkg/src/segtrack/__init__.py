"""Discriminative single-shot segmentation tracker.

The package combines a prototype-matching appearance model, an online
correlation-filter localiser and a refinement decoder into a tracker that
outputs per-frame segmentation masks and axis-aligned boxes. A scale head
estimates the inherent (occlusion-independent) target size that drives
search-region sizing.
"""

from . import (
    backbone,
    config,
    dataio,
    errors,
    gem,
    geometry,
    gim,
    metrics,
    pipeline,
    refine,
    sem,
    synth,
    tracker,
    training,
    viz,
)

__all__ = [
    "backbone",
    "config",
    "dataio",
    "errors",
    "gem",
    "geometry",
    "gim",
    "metrics",
    "pipeline",
    "refine",
    "sem",
    "synth",
    "tracker",
    "training",
    "viz",
]
__version__ = "0.1.0"
