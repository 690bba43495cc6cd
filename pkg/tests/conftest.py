import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_spd(rng, p, jitter=0.5):
    """Well-conditioned random symmetric positive definite matrix."""
    a = rng.standard_normal((p, p))
    return a @ a.T / p + jitter * np.eye(p)


def random_symmetric(rng, p):
    a = rng.standard_normal((p, p))
    return 0.5 * (a + a.T)
