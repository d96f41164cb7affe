import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from subdiff.csi import fbm_acf
from subdiff.toeplitz import (NotPositiveDefiniteError, dense_toeplitz, dl_solve, dl_whiten,
                              simulate_stationary, substream, toeplitz_matvec)
from conftest import random_pd_acf


def test_identity_solve():
    b = np.arange(5.0)
    x, ld = dl_solve(np.r_[1.0, np.zeros(4)], b)
    assert np.array_equal(x, b)
    assert ld == 0.0


def test_scaled_identity_logdet():
    _, ld = dl_solve([2.0, 0.0, 0.0], np.ones(3))
    assert ld == pytest.approx(3 * np.log(2.0), rel=1e-15)


def test_fbm_solve_matches_cholesky(rng):
    acf = fbm_acf(0.7, 1 / 60, 64)
    b = rng.standard_normal((64, 3))
    x, ld = dl_solve(acf, b)
    c = linalg.cho_factor(dense_toeplitz(acf), lower=True)
    np.testing.assert_allclose(x, linalg.cho_solve(c, b), rtol=1e-8)
    assert ld == pytest.approx(2 * np.sum(np.log(np.diag(c[0]))), rel=1e-10)


def test_whiten_quadratic_forms(rng):
    acf = random_pd_acf(rng, 40)
    cols = rng.standard_normal((40, 2))
    err, var = dl_whiten(acf, cols)
    quad = (err / var[:, None]).T @ err
    V = dense_toeplitz(acf)
    np.testing.assert_allclose(quad, cols.T @ np.linalg.solve(V, cols), rtol=1e-9)
    assert np.sum(np.log(var)) == pytest.approx(np.linalg.slogdet(V)[1], rel=1e-10)


def test_not_pd_reports_order():
    # [[1, .9, .9], ...] with a third entry that breaks PD at order 2
    with pytest.raises(NotPositiveDefiniteError) as info:
        dl_solve([1.0, 0.9, -0.9], np.ones(3))
    assert info.value.order == 2
    with pytest.raises(NotPositiveDefiniteError):
        dl_whiten([0.0, 0.0], np.ones(2))


def test_matvec_identity():
    x = np.arange(6.0)
    e = np.r_[1.0, np.zeros(5)]
    np.testing.assert_allclose(toeplitz_matvec(e, e, x), x, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_matvec_rectangular_naive(m, ell, seed):
    r = np.random.default_rng(seed)
    row, col = r.standard_normal(ell), r.standard_normal(m)
    col[0] = row[0]
    x = r.standard_normal(ell)
    naive = np.array([sum((row[j - i] if j >= i else col[i - j]) * x[j] for j in range(ell))
                      for i in range(m)])
    np.testing.assert_allclose(toeplitz_matvec(row, col, x), naive, atol=1e-10)


def test_matvec_rejects_mismatch():
    with pytest.raises(ValueError):
        toeplitz_matvec([1.0, 2.0], [3.0, 2.0], [1.0, 1.0])


def test_simulate_white_variance():
    out = simulate_stationary(np.r_[1.0, np.zeros(999)], 100, seed=1)
    z = np.concatenate(out)
    assert abs(z.var() - 1) < 0.05


def test_simulate_brownian_uncorrelated():
    n, paths = 1000, 100
    out = np.stack([p[:, 0] for p in simulate_stationary(fbm_acf(1.0, 1.0, n), paths, seed=2)])
    r1 = np.mean(out[:, 1:] * out[:, :-1]) / np.mean(out ** 2)
    assert abs(r1) < 3 / np.sqrt(n * paths)


def test_simulate_fbm_half_lag1():
    n, paths = 500, 200
    out = np.stack([p[:, 0] for p in simulate_stationary(fbm_acf(0.5, 1.0, n), paths, seed=3)])
    r1 = np.mean(out[:, 1:] * out[:, :-1]) / np.mean(out ** 2)
    target = (np.sqrt(2) - 2) / 2
    # lag-1 correlations of different pairs are dependent; 4/sqrt(n paths) is generous
    assert abs(r1 - target) < 4 / np.sqrt(n * paths)


def test_simulate_sample_covariance(rng):
    acf = random_pd_acf(rng, 8)
    out = np.stack([p[:, 0] for p in simulate_stationary(acf, 20000, seed=4)])
    for h in range(6):
        prod = out[:, h:] * out[:, :8 - h]
        est = prod.mean()
        se = prod.mean(axis=1).std() / np.sqrt(out.shape[0])
        assert abs(est - acf[h]) < 4 * se + 1e-12


def test_simulate_deterministic_and_shapes():
    acf = fbm_acf(0.8, 0.1, 50)
    a = simulate_stationary(acf, 3, cols=2, seed=9)
    b = simulate_stationary(acf, 5, cols=2, seed=9)
    assert a[0].shape == (50, 2)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_substream_key_types():
    a = substream(1, "fit", 3).integers(1 << 30)
    assert a == substream(1, "fit", 3).integers(1 << 30)
    assert a != substream(1, "fit", 4).integers(1 << 30)
