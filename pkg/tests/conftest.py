import os

import numpy as np
import pytest

from convexlab.data import (
    DATA_DIR_ENV,
    DEFAULT_MNIST_URL,
    MNIST_FILES,
    SampleBatch,
    TransportError,
    fetch_mnist,
)

_FETCH_ATTEMPTED = {"done": False, "dir": None}


def _has_files(path) -> bool:
    return path and all(os.path.exists(os.path.join(path, name)) for name in MNIST_FILES)


@pytest.fixture(scope="session")
def mnist_dir():
    """Locate the official MNIST files: CONVEXLAB_DATA_DIR, then ./data,
    then one download attempt.  Skips the requesting test when the dataset
    is unreachable (offline environment)."""
    for candidate in (os.environ.get(DATA_DIR_ENV), "data"):
        if _has_files(candidate):
            return candidate
    if not _FETCH_ATTEMPTED["done"]:
        _FETCH_ATTEMPTED["done"] = True
        try:
            fetch_mnist(DEFAULT_MNIST_URL, "data")
            _FETCH_ATTEMPTED["dir"] = "data"
        except (TransportError, OSError):
            _FETCH_ATTEMPTED["dir"] = None
    if _FETCH_ATTEMPTED["dir"]:
        return _FETCH_ATTEMPTED["dir"]
    pytest.skip("official MNIST files unavailable (no local copy and no network route)")


@pytest.fixture
def tiny_classification_batch():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 4))
    y = rng.integers(0, 3, size=12)
    return SampleBatch(x, y)


@pytest.fixture
def tiny_regression_batch():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(10, 2))
    return SampleBatch(x, rng.normal(size=10))
