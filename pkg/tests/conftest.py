import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(gen, d, lo=0.1, hi=10.0):
    q, _ = np.linalg.qr(gen.standard_normal((d, d)))
    return (q * gen.uniform(lo, hi, d)) @ q.T


def random_b(gen, d):
    b = gen.standard_normal(d)
    if not np.any(b > 0):
        b[gen.integers(d)] = abs(b).max() + 0.1
    return b


@pytest.fixture
def rho_sigma():
    return np.array([[1.0, 0.5], [0.5, 1.0]])
