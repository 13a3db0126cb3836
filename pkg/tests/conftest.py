import time

import pytest
import torch

# single-threaded math keeps reruns bit-identical and avoids oversubscription
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def trained_state():
    """Train the full pipeline once with stock settings; shared by the
    acceptance criteria and the generalization checks."""
    from segtrack.config import RunConfig, build_bundle, build_sequences
    from segtrack.training import train_segmentation, train_sem

    config = RunConfig()
    corpus = build_sequences(config)
    torch.manual_seed(config.seed)
    bundle = build_bundle(config)
    start = time.time()
    seg_run = train_segmentation(bundle, corpus, config.train_config("segmentation"))
    sem_run = train_sem(bundle, corpus, config.train_config("sem"))
    elapsed = time.time() - start
    bundle.eval()
    return {
        "config": config,
        "corpus": corpus,
        "bundle": bundle,
        "state": bundle.state_dict(),
        "seg_history": seg_run.history,
        "sem_history": sem_run.history,
        "train_seconds": elapsed,
    }
