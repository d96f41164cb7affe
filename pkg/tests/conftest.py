import numpy as np
import pytest


def random_pd_acf(rng, n):
    """First row of a random PD Toeplitz matrix, from a positive spectrum."""
    m = 2 * n
    spec = rng.gamma(2.0, size=m // 2 + 1) + 0.05
    return np.fft.irfft(spec, m)[:n] * m


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
