import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dynamic_model import ModelSpec  # noqa: E402
from experiment_harness import builtin_scenario  # noqa: E402

COUPLED_B = [[0.7, 0.3], [0.2, 0.8]]


@pytest.fixture(autouse=True)
def capped_threads(monkeypatch):
    monkeypatch.setenv("FACTOR_COLLAPSE_THREADS", "2")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def figure1_spec() -> ModelSpec:
    return builtin_scenario("figure1").spec


@pytest.fixture
def coupled_small_spec() -> ModelSpec:
    """Two items per factor; cheap enough for per-test simulation"""
    loadings = np.zeros((4, 2))
    loadings[:2, 0] = 0.8
    loadings[2:, 1] = 0.8
    return ModelSpec.create(loadings=loadings, transition=COUPLED_B, noise_decay=0.2)
