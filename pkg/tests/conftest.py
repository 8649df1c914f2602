from pathlib import Path

import numpy as np
import pytest

from dptrn.config import ModelConfig, SyntheticSpec, TrainConfig, validated
from dptrn.model import DptrnModel


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(T=4, M=3, C=3, relation_hidden=(8, 4), classifier_hidden=(8, 6, 4), dropout_rate=0.0)
    values.update(overrides)
    return validated(ModelConfig, **values)


def activation_pattern(model: DptrnModel) -> np.ndarray:
    stacks = [s for s in (model.relation, model.classifier) if s is not None]
    return np.concatenate([s.activation_pattern() for s in stacks])


def close(analytic, numeric, rtol=1e-4, atol=1e-8) -> bool:
    return abs(analytic - numeric) <= rtol * max(abs(analytic), abs(numeric)) + atol


def read_ppm(path) -> np.ndarray:
    """Pixels of a binary P6 pixmap as [height, width, 3] uint8."""
    magic, dims, maxval, pixels = Path(path).read_bytes().split(b"\n", 3)
    assert magic == b"P6" and maxval == b"255"
    width, height = (int(v) for v in dims.split())
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)


def unflatten(grid: np.ndarray, n_values: int) -> np.ndarray:
    """First `n_values` cells of a grid in row-major order."""
    return np.asarray(grid, dtype=np.float64).ravel()[:n_values].copy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture
def tiny_batch(rng):
    nodes = rng.standard_normal((5, 4, 3))
    labels = np.array([0, 1, 2, 1, 0])
    return nodes, labels


@pytest.fixture
def small_spec():
    return validated(SyntheticSpec, T=6, M=4, C=3, evidence_nodes_per_sample=2,
                     n_train=120, n_valid=30, n_test=60, seed=3)


@pytest.fixture
def fast_train_config():
    return validated(TrainConfig, batch_size=16, epochs=3, learning_rate=1e-2, l2_coeff=0.0, seed=0)
