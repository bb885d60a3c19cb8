"""Test configuration and fixtures."""

import os

import numpy as np
import pytest

# Keep settings independent of any developer .env
os.environ.setdefault("ARC_LOG_LEVEL", "INFO")

from arcconv.models.configs import ArcLayerConfig, TrainConfig, TrainMode  # noqa: E402


def reference_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0,
                     groups: int = 1) -> np.ndarray:
    """Direct nested-loop cross-correlation used as an oracle."""
    n, c_in, h, wd = x.shape
    c_out, c_group, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out_per_group = c_out // groups
    out = np.zeros((n, c_out, ho, wo))
    for b in range(n):
        for o in range(c_out):
            g = o // out_per_group
            slab = xp[b, g * c_group:(g + 1) * c_group]
            for i in range(ho):
                for j in range(wo):
                    window = slab[:, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[b, o, i, j] = np.sum(window * w[o])
    return out


@pytest.fixture
def rng():
    """Seeded generator shared by a test."""
    return np.random.default_rng(1234)


@pytest.fixture
def kernel_1_to_9():
    """The 3x3 kernel [[1,2,3],[4,5,6],[7,8,9]]."""
    return np.arange(1, 10, dtype=np.float64).reshape(3, 3)


@pytest.fixture
def small_arc_config():
    return ArcLayerConfig(n=2, k=3, c_in=3, c_out=4)


@pytest.fixture
def tiny_train_config():
    """A training run small enough for unit tests."""
    return TrainConfig(mode=TrainMode.ARC, n=2, epochs=1, batch_size=8, train_count=24, test_count=8,
                       image_size=16, seed=0)


@pytest.fixture
def conv_oracle():
    return reference_conv2d


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run the full-size training comparisons")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size toy training runs (several minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
