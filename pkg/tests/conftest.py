import numpy as np
import pytest

from popmjp import RandomSource


@pytest.fixture
def rng():
    return RandomSource(20240607)


def bd_kernel(capacity=5, lam=1.0, mu=0.5, seasonal=False, horizon=2.0):
    from popmjp import BirthDeathModel
    return BirthDeathModel(capacity, lam, mu, horizon, seasonal=seasonal).kernel()


def tv_distance(a, b, minlength=0):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    n = max(minlength, int(max(a.max(), b.max())) + 1)
    pa = np.bincount(a, minlength=n) / len(a)
    pb = np.bincount(b, minlength=n) / len(b)
    return 0.5 * np.abs(pa - pb).sum()
