"""Shared fixtures: a session-scoped trained model (used by the acceptance
suite and the slower behavioral tests) and small helpers."""

from __future__ import annotations

import numpy as np
import pytest

from nutnet import model, training
from nutnet.synth import synth_corpus

TRAIN_SEED = 7
TRAIN_IMAGES = 10


@pytest.fixture(scope="session")
def trained_model(tmp_path_factory):
    """Train the default model once per session on a synthetic corpus.

    The corpus provides 10 * 1024 > 2,000 clean tiles; evaluation fixtures
    use different generator seeds so everything they measure is held out.
    """
    import time

    corpus = synth_corpus(TRAIN_SEED, TRAIN_IMAGES)
    cfg = training.TrainConfig()
    spec = training.NoiseOverlaySpec()
    t0 = time.perf_counter()
    params, history = training.train(corpus, spec, cfg)
    train_seconds = time.perf_counter() - t0
    ckpt = tmp_path_factory.mktemp("model") / "model.nnae"
    model.save_checkpoint(params, ckpt, seed=cfg.seed)
    return dict(params=params, history=history, checkpoint=ckpt, config=cfg,
                train_seconds=train_seconds)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def to_float64(params: model.AEParams) -> model.AEParams:
    """A float64 copy of the parameters, needed for finite-difference work
    where float32 storage would dominate the error budget."""
    p = params.copy()
    for layer in [*p.encoder, *p.decoder]:
        layer.weight = layer.weight.astype(np.float64)
        layer.bias = layer.bias.astype(np.float64)
    return p
