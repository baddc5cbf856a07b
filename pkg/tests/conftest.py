import numpy as np
import pytest

from sharecause import _backend, behavior, dissemination


@pytest.fixture(params=["compiled", "fallback"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "compiled":
        if not _backend.COMPILED:
            pytest.skip("compiled kernels not built")
        mod = _backend.kernels
    else:
        mod = _backend.fallback
    monkeypatch.setattr(dissemination, "kernels", mod)
    monkeypatch.setattr(behavior, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
