import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subdiff.csi import (CsiKernel, acf_to_msd, fbm_acf, fbm_cov, fbm_msd, msd_at_lag,
                         msd_to_acf, second_difference_power)
from subdiff.toeplitz import dense_toeplitz


def test_fbm_msd_values():
    assert fbm_msd(1.0, 2.0) == 2.0
    assert fbm_msd(0.8, 1.0) == 1.0
    assert fbm_msd(0.6, 4.0) == pytest.approx(2.2974, abs=5e-5)
    with pytest.raises(ValueError):
        fbm_msd(2.0, 1.0)
    with pytest.raises(ValueError):
        fbm_msd(0.5, -1.0)


def test_fbm_cov_values():
    s, t = np.meshgrid(np.linspace(0, 3, 7), np.linspace(0, 3, 7))
    np.testing.assert_allclose(fbm_cov(1.0, s, t), np.minimum(s, t), atol=1e-15)
    assert fbm_cov(0.7, 2.5, 2.5) == pytest.approx(2.5 ** 0.7)
    assert fbm_cov(0.5, 1.0, 2.0) == pytest.approx(np.sqrt(2) / 2, abs=1e-4)


def test_fbm_stationary_increments():
    alpha, t = 0.6, 0.7
    for s in np.linspace(0, 5, 11):
        var = fbm_cov(alpha, s + t, s + t) + fbm_cov(alpha, s, s) - 2 * fbm_cov(alpha, s, s + t)
        assert var == pytest.approx(t ** alpha, rel=1e-12)


def test_brownian_acf():
    acf = msd_to_acf(2 * 0.3 * np.arange(6) * 0.1)
    np.testing.assert_allclose(acf, [0.06, 0, 0, 0, 0], atol=1e-15)


def test_fbm_half_lag1():
    assert fbm_acf(0.5, 1.0, 2)[1] == pytest.approx((np.sqrt(2) - 2) / 2, abs=1e-5)


def test_second_difference_high_precision():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    a = 0.7
    t = np.array([0.0, 0.5, 1.0, 1.9, 2.0, 2.5, 10.0, 1e3, 1e6])
    ref = [float(abs(mpmath.mpf(x) + 1) ** a + abs(mpmath.mpf(x) - 1) ** a - 2 * mpmath.mpf(x) ** a)
           for x in t]
    np.testing.assert_allclose(second_difference_power(t, 1.0, a), ref, rtol=1e-13)


def test_acf_to_msd_examples():
    np.testing.assert_allclose(acf_to_msd([3.0, 0, 0, 0]), [3, 6, 9, 12])
    np.testing.assert_allclose(acf_to_msd([1.0, 0.5, 0.0])[:2], [1.0, 3.0])


@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.0, 1.5])
def test_fbm_roundtrip(alpha):
    dt = 0.05
    msd = acf_to_msd(fbm_acf(alpha, dt, 300))
    np.testing.assert_allclose(msd, (np.arange(1, 301) * dt) ** alpha, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
def test_acf_msd_inverse_pair(n, seed):
    r = np.random.default_rng(seed)
    eta = np.concatenate([[0.0], np.cumsum(r.uniform(0.1, 1.0, n))])
    back = np.concatenate([[0.0], acf_to_msd(msd_to_acf(eta))])
    np.testing.assert_allclose(back, eta, rtol=1e-12, atol=1e-12)
    acf = msd_to_acf(eta)
    np.testing.assert_allclose(msd_to_acf(np.concatenate([[0.0], acf_to_msd(acf)])), acf,
                               rtol=1e-10, atol=1e-12)


def test_acf_to_msd_is_variance_of_partial_sums():
    acf = fbm_acf(0.6, 1.0, 64)
    V = dense_toeplitz(acf)
    msd = acf_to_msd(acf)
    for n in (1, 2, 17, 64):
        w = np.r_[np.ones(n), np.zeros(64 - n)]
        assert msd[n - 1] == pytest.approx(w @ V @ w, rel=1e-12)
        assert msd_at_lag(acf, n) == pytest.approx(w @ V @ w, rel=1e-12)


def test_kernels():
    k = CsiKernel("fbm", alpha=0.8)
    np.testing.assert_allclose(k.acf(0.1, 10), fbm_acf(0.8, 0.1, 10))
    assert k.msd(0.0) == 0.0
    emp = CsiKernel("empirical", table=(np.arange(1, 6), np.arange(1, 6) * 2.0))
    np.testing.assert_allclose(emp.acf(1.0, 5), [2, 0, 0, 0, 0], atol=1e-15)
    with pytest.raises(ValueError):
        emp.msd_grid(1.0, 8)
    with pytest.raises(ValueError):
        CsiKernel("confined")
    with pytest.raises(ValueError):
        CsiKernel("fbm", alpha=2.5)
