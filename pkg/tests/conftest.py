import numpy as np
import pytest

from mvjl.measure import EmpiricalMeasure
from mvjl.model import builtin_model
from mvjl.rng import RandomStream


@pytest.fixture
def lmf():
    """linear_mean_field at its defaults (a=-0.5, c=0.2, sigma0=0.3, gamma=0.1, alpha=1, rate=2)."""
    return builtin_model("linear_mean_field")


@pytest.fixture
def normal_measure():
    def make(K=50, d=1, seed=0, loc=0.0, scale=1.0):
        return EmpiricalMeasure(np.random.default_rng(seed).normal(loc, scale, size=(K, d)))

    return make


@pytest.fixture
def stream():
    return RandomStream(12345)
