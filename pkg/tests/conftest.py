import numpy as np
import pytest

from tonefair import _kernels


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_kernels, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_simplex(rng, k, n=None, sparse=0.0):
    shape = (k,) if n is None else (n, k)
    x = rng.random(shape)
    if sparse:
        x[rng.random(shape) < sparse] = 0.0
    x = np.where(x.sum(axis=-1, keepdims=True) == 0, 1.0, x)
    return x / x.sum(axis=-1, keepdims=True)
