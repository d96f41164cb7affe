import numpy as np
import pytest
from scipy import optimize, stats

from subdiff.csi import fbm_acf
from subdiff.experiments import simulate_experiment
from subdiff.likelihood import (
    MatNormModel,
    fit_mle,
    kl_best_fit,
    kl_objective,
    matnorm_loglik,
    profile_mle,
)
from subdiff.likelihood import _trace_inv_product
from subdiff.models import ModelSpec, drift_increments
from subdiff.toeplitz import NotPositiveDefiniteError, dense_toeplitz

from conftest import random_pd_acf


def random_instance(rng, n, k, d):
    acf = random_pd_acf(rng, n)
    F = rng.normal(size=(n, d))
    Y = rng.normal(size=(n, k)) * 2 + rng.normal(size=k)
    beta = rng.normal(size=(d, k))
    A = rng.normal(size=(k, k))
    sigma = A @ A.T + 0.5 * np.eye(k)
    return MatNormModel(F, acf, Y), beta, sigma


def kron_oracle(model, beta, sigma):
    V = dense_toeplitz(model.acf)
    mean = (model.drift_matrix @ beta).ravel(order="F")
    return stats.multivariate_normal(mean, np.kron(sigma, V)).logpdf(model.data.ravel(order="F"))


# --- log-density -----------------------------------------------------------

def test_loglik_matches_kronecker_oracle(rng):
    for _ in range(100):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(2, 64 // k + 1))
        d = int(rng.integers(0, 3))
        model, beta, sigma = random_instance(rng, n, k, d)
        assert matnorm_loglik(model, beta, sigma) == pytest.approx(kron_oracle(model, beta, sigma), rel=1e-10)


def test_single_standard_normal():
    m = MatNormModel(np.zeros((1, 0)), [1.0], [[0.0]])
    assert matnorm_loglik(m, np.zeros((0, 1)), [[1.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-15)


def test_non_pd_acf_raises():
    m = MatNormModel(np.zeros((3, 0)), [1.0, 2.0, 0.0], np.ones((3, 1)))
    with pytest.raises(NotPositiveDefiniteError):
        matnorm_loglik(m, np.zeros((0, 1)), [[1.0]])


# --- profile ---------------------------------------------------------------

def test_profile_matches_dense_gls(rng):
    model, _, _ = random_instance(rng, 30, 2, 2)
    V = dense_toeplitz(model.acf)
    Vi = np.linalg.inv(V)
    F, Y = model.drift_matrix, model.data
    beta = np.linalg.solve(F.T @ Vi @ F, F.T @ Vi @ Y)
    R = Y - F @ beta
    sigma = R.T @ Vi @ R / 30
    fit = profile_mle(model)
    np.testing.assert_allclose(fit.beta_hat, beta, rtol=1e-9)
    np.testing.assert_allclose(fit.sigma_hat, sigma, rtol=1e-9)
    assert fit.loglik == pytest.approx(kron_oracle(model, beta, sigma), rel=1e-10)


def test_profile_is_envelope(rng):
    for _ in range(10):
        model, _, _ = random_instance(rng, 20, 2, 1)
        fit = profile_mle(model)
        for _ in range(100):
            beta = fit.beta_hat + rng.normal(scale=0.3, size=fit.beta_hat.shape)
            A = rng.normal(scale=0.3, size=(2, 2))
            sigma = fit.sigma_hat + A @ A.T - 0.1 * np.trace(A @ A.T) * np.eye(2) / 2
            if np.any(np.linalg.eigvalsh(sigma) <= 0):
                continue
            assert matnorm_loglik(model, beta, sigma) <= fit.loglik + 1e-9 * abs(fit.loglik)


def test_profile_matches_numeric_optimum(rng):
    model, _, _ = random_instance(rng, 25, 2, 1)

    def neg(x):
        beta = x[:2].reshape(1, 2)
        L = np.array([[np.exp(x[2]), 0], [x[3], np.exp(x[4])]])
        return -matnorm_loglik(model, beta, L @ L.T)

    res = optimize.minimize(neg, np.zeros(5), method="BFGS", options={"gtol": 1e-9})
    assert -res.fun == pytest.approx(profile_mle(model).loglik, rel=1e-8)


# --- fitting ---------------------------------------------------------------

@pytest.fixture(scope="module")
def fbm_path():
    return simulate_experiment("fbm+filter", {"alpha": 0.7, "sigma": 1.0}, B=1, N=300, dt=0.1, k=2, seed=11)[0].positions


def test_fit_reaches_profile_optimum(fbm_path):
    fit = fit_mle(ModelSpec("fbm"), fbm_path, 0.1)
    assert 0.5 < fit.alpha < 0.9
    assert fit.has_se and not fit.boundary
    dx = np.diff(fbm_path, axis=0)
    for a in (fit.alpha - 0.01, fit.alpha + 0.01):
        m = MatNormModel(drift_increments("linear", 0.1, 300), fbm_acf(a, 0.1, 300), dx)
        assert profile_mle(m).loglik < fit.loglik
    m = MatNormModel(drift_increments("linear", 0.1, 300), fbm_acf(fit.alpha, 0.1, 300), dx)
    assert profile_mle(m).loglik == pytest.approx(fit.loglik, rel=1e-12)


def test_fit_scale_equivariance(fbm_path):
    a = fit_mle(ModelSpec("fbm"), fbm_path, 0.1)
    b = fit_mle(ModelSpec("fbm"), 3.0 * fbm_path + 7.0, 0.1)
    assert b.alpha == pytest.approx(a.alpha, abs=1e-6)
    assert b.D == pytest.approx(9 * a.D, rel=1e-5)
    assert b.se_alpha == pytest.approx(a.se_alpha, rel=1e-3)


def test_fit_se_matches_direct_hessian(fbm_path):
    # profile curvature in alpha equals the full-information marginal variance
    fit = fit_mle(ModelSpec("fbm"), fbm_path, 0.1)
    dx = np.diff(fbm_path, axis=0)
    F = drift_increments("linear", 0.1, 300)

    def pl(a):
        return profile_mle(MatNormModel(F, fbm_acf(a, 0.1, 300), dx)).loglik

    h = 1e-3
    curv = (pl(fit.alpha + h) - 2 * pl(fit.alpha) + pl(fit.alpha - h)) / h ** 2
    assert fit.se_alpha == pytest.approx(1 / np.sqrt(-curv), rel=0.02)


def test_fit_without_drift_moves_filter(fbm_path):
    fit = fit_mle(ModelSpec("fma", "none"), fbm_path, 0.1)
    assert fit.phi["rho"] != 0.0 and fit.has_se
    assert fit.beta.shape == (0, 2)


def test_fit_result_dict(fbm_path):
    d = fit_mle(ModelSpec("fma"), fbm_path, 0.1).to_dict()
    assert d["model"]["kind"] == "fma"
    assert set(d["params"]["phi"]) == {"alpha", "rho"}
    lo, hi = d["ci_alpha"]
    assert lo < d["alpha"] < hi


# --- KL --------------------------------------------------------------------

def test_trace_inverse_product_matches_dense(rng):
    for n in (1, 2, 5, 40):
        a, b = random_pd_acf(rng, n), random_pd_acf(rng, n)
        tr, logdet = _trace_inv_product(a, b)
        exp = np.trace(np.linalg.solve(dense_toeplitz(a), dense_toeplitz(b)))
        assert tr == pytest.approx(exp, rel=1e-10)
        assert logdet == pytest.approx(np.linalg.slogdet(dense_toeplitz(a))[1], rel=1e-10, abs=1e-12)


def test_kl_zero_at_truth_positive_elsewhere(rng):
    n, k = 30, 2
    acf = fbm_acf(0.8, 0.1, n)
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert kl_objective(acf, S, acf, S, n, k) == pytest.approx(n * k, rel=1e-10)
    for _ in range(10):
        cand = fbm_acf(rng.uniform(0.2, 1.8), 0.1, n)
        Sc = S * rng.uniform(0.5, 2)
        assert kl_objective(acf, S, cand, Sc, n, k) > n * k


def test_kl_matches_dense_formula(rng):
    n, k = 12, 2
    a, b = random_pd_acf(rng, n), random_pd_acf(rng, n)
    S, Sc = np.diag([1.0, 2.0]), np.array([[1.5, 0.2], [0.2, 0.7]])
    full, fullc = np.kron(S, dense_toeplitz(a)), np.kron(Sc, dense_toeplitz(b))
    exp = (np.trace(np.linalg.solve(fullc, full)) + np.linalg.slogdet(fullc)[1] - np.linalg.slogdet(full)[1])
    assert kl_objective(a, S, b, Sc, n, k) == pytest.approx(exp, rel=1e-10)


def test_kl_best_fit_recovers_own_family():
    n = 200
    acf = fbm_acf(0.6, 0.1, n)
    out = kl_best_fit(acf, np.eye(2), ModelSpec("fbm", "none"), 0.1, n)
    assert out["alpha"] == pytest.approx(0.6, abs=1e-6)
    np.testing.assert_allclose(out["sigma"], np.eye(2), rtol=1e-5)
    assert out["objective"] == pytest.approx(2 * n, rel=1e-10)
