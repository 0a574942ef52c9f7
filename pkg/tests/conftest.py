from __future__ import annotations

import numpy as np
import pytest

from qvkit import Checkpoint, TrainConfig, make_task, registered_tasks, train

PINNED_SEED = 7


def pinned_config_pair(seed: int = PINNED_SEED) -> tuple[TrainConfig, TrainConfig]:
    return TrainConfig(seed=seed).as_pair()


def max_scale_relative_error(x: np.ndarray, y: np.ndarray) -> float:
    """Largest elementwise error relative to the magnitude of y."""
    scale = float(np.max(np.abs(y.astype(np.float64))))
    if scale == 0.0:
        return float(np.max(np.abs(x.astype(np.float64))))
    return float(np.max(np.abs(x.astype(np.float64) - y.astype(np.float64)))) / scale


def with_head_from(body: Checkpoint, head_source: Checkpoint) -> Checkpoint:
    """Backbone of `body` completed with the head tensors of `head_source`."""
    merged = dict(body.entries)
    for name in head_source.names():
        if name.startswith(("head.", "classifier.")):
            merged[name] = head_source.entries[name]
    return Checkpoint(merged, dict(body.meta))


@pytest.fixture(scope="session")
def tasks_seed7():
    return {name: make_task(name, PINNED_SEED) for name in registered_tasks()}


@pytest.fixture(scope="session")
def trained_pairs(tasks_seed7):
    """(standard, quantization-aware) checkpoint per task, pinned config, seed 7."""
    cfg_ft, cfg_qat = pinned_config_pair()
    return {
        name: (train(task, cfg_ft), train(task, cfg_qat))
        for name, task in tasks_seed7.items()
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
