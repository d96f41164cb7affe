"""
Matrix-normal likelihoods for location-scale increment models.

Increments ``Y`` (``N x k``) follow ``MatNorm(F beta, V, Sigma)``, i.e.
``vec(Y) ~ N(vec(F beta), Sigma kron V)`` with ``V`` the Toeplitz matrix of
an increment autocovariance. All log-likelihoods include the
``-(N k / 2) log(2 pi)`` constant.

For fixed kernel parameters the conditional MLEs are

    beta_hat  = (F' V^-1 F)^-1 F' V^-1 Y
    Sigma_hat = (Y - F beta_hat)' V^-1 (Y - F beta_hat) / N

and the profile log-likelihood is
``-(k log|V| + N log|Sigma_hat| + N k (1 + log 2 pi)) / 2``. Every quadratic
form is evaluated from Durbin-Levinson innovations of the columns of
``[F | Y]``, so each kernel evaluation costs O(N^2).
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import optimize, signal
from scipy.special import expit, logit

from .models import family
from .toeplitz import NotPositiveDefiniteError, dl_solve, dl_whiten, substream

__all__ = [
    "MatNormModel",
    "ProfileFit",
    "FitResult",
    "ConvergenceError",
    "matnorm_loglik",
    "profile_mle",
    "fit_mle",
    "kl_objective",
    "kl_best_fit",
]

log = logging.getLogger(__name__)

_LOG2PI = np.log(2.0 * np.pi)
_Z95 = 1.959963984540054
_U_BOX = 25.0
_U_EDGE = 12.0


class ConvergenceError(RuntimeError):
    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(f"{message}; trace: {trace}")


@dataclass(frozen=True)
class MatNormModel:
    """
    Parameters
    ----------
    drift_matrix : (N, d) array_like
    acf : (N,) array_like
        first row of the row covariance ``V``.
    data : (N, k) array_like
    """
    drift_matrix: np.ndarray
    acf: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.data, dtype=float)
        y = y.reshape(len(y), -1)
        f = np.asarray(self.drift_matrix, dtype=float).reshape(len(y), -1)
        acf = np.asarray(self.acf, dtype=float)
        if acf.size != y.shape[0]:
            raise ValueError(f"acf has {acf.size} lags for {y.shape[0]} increments")
        object.__setattr__(self, "data", y)
        object.__setattr__(self, "drift_matrix", f)
        object.__setattr__(self, "acf", acf)

    @property
    def shape(self):
        return self.data.shape


class _Whitened:
    """Innovations of ``[F | Y]`` scaled to unit variance, plus ``log|V|``."""

    def __init__(self, acf, F, Y):
        d = F.shape[1]
        err, var = dl_whiten(acf, np.hstack([F, Y]))
        w = err / np.sqrt(var)[:, None]
        self.F = w[:, :d]
        self.Y = w[:, d:]
        self.logdet = float(np.sum(np.log(var)))

    def profile(self):
        n, k = self.Y.shape
        if self.F.shape[1]:
            beta, _, rank, _ = np.linalg.lstsq(self.F, self.Y, rcond=None)
            if rank < self.F.shape[1]:
                raise np.linalg.LinAlgError("drift matrix is rank deficient under V")
            resid = self.Y - self.F @ beta
        else:
            beta = np.zeros((0, k))
            resid = self.Y
        sigma = resid.T @ resid / n
        sign, logdet_s = np.linalg.slogdet(sigma)
        if sign <= 0:
            raise np.linalg.LinAlgError("Sigma_hat is singular")
        ll = -0.5 * (k * self.logdet + n * logdet_s + n * k * (1.0 + _LOG2PI))
        return beta, sigma, float(ll)

    def loglik(self, beta, sigma):
        n, k = self.Y.shape
        resid = self.Y - self.F @ beta if self.F.shape[1] else self.Y
        chol = np.linalg.cholesky(sigma)
        z = np.linalg.solve(chol, resid.T)
        quad = float(np.sum(z * z))
        logdet_s = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (quad + n * logdet_s + k * self.logdet + n * k * _LOG2PI)


def matnorm_loglik(model, beta, sigma):
    """
    Matrix-normal log-density of `!model.data` at ``(beta, sigma)``.

    Raises `NotPositiveDefiniteError` for an invalid row covariance and
    `numpy.linalg.LinAlgError` for a non-PD `!sigma`.
    """
    n, k = model.shape
    beta = np.asarray(beta, dtype=float).reshape(model.drift_matrix.shape[1], k)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return _Whitened(model.acf, model.drift_matrix, model.data).loglik(beta, sigma)


@dataclass(frozen=True)
class ProfileFit:
    beta_hat: np.ndarray
    sigma_hat: np.ndarray
    loglik: float


def profile_mle(model):
    """Closed-form ``(beta_hat, Sigma_hat)`` and the profile log-likelihood."""
    beta, sigma, ll = _Whitened(model.acf, model.drift_matrix, model.data).profile()
    return ProfileFit(beta, sigma, ll)


# --- full-parameter packing for the observed information ---------------------

def _chol_pack(sigma):
    chol = np.linalg.cholesky(sigma)
    k = chol.shape[0]
    out = []
    for i in range(k):
        for j in range(i + 1):
            out.append(np.log(chol[i, j]) if i == j else chol[i, j])
    return np.array(out)


def _chol_unpack(v, k):
    chol = np.zeros((k, k))
    it = iter(v)
    for i in range(k):
        for j in range(i + 1):
            x = next(it)
            chol[i, j] = np.exp(x) if i == j else x
    return chol


def _logD_gradient(v, k):
    # d log(tr(L L')) / dv for log-Cholesky coordinates v
    chol = _chol_unpack(v, k)
    tr = np.sum(chol ** 2)
    grad = []
    for i in range(k):
        for j in range(i + 1):
            grad.append(2.0 * chol[i, j] ** 2 / tr if i == j else 2.0 * chol[i, j] / tr)
    return np.array(grad)


@dataclass
class FitResult:
    """
    Maximum likelihood fit of one path.

    ``vcov`` is the inverse of the negative finite-difference Hessian of the
    full log-likelihood in the coordinates ``param_names``: transformed kernel
    parameters, then ``beta`` (row-major), then the log-Cholesky factor of
    ``Sigma``.
    """
    spec: object
    phi: dict
    u: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    loglik: float
    vcov: np.ndarray
    param_names: list
    alpha: float
    D: float
    se_alpha: float
    se_logD: float
    converged: bool = True
    boundary: bool = False
    n_evals: int = 0
    n_restarts: int = 0
    n: int = 0
    dt: float = np.nan
    message: str = ""
    trace: list = field(default_factory=list)

    @property
    def k(self):
        return self.sigma.shape[0]

    @property
    def ci_alpha(self):
        return (self.alpha - _Z95 * self.se_alpha, self.alpha + _Z95 * self.se_alpha)

    @property
    def ci_logD(self):
        ld = np.log(self.D)
        return (ld - _Z95 * self.se_logD, ld + _Z95 * self.se_logD)

    @property
    def has_se(self):
        return bool(np.isfinite(self.se_alpha) and np.isfinite(self.se_logD))

    def to_dict(self):
        return {
            "model": self.spec.to_dict(),
            "alpha": float(self.alpha),
            "D": float(self.D),
            "se_alpha": _finite_or_none(self.se_alpha),
            "se_logD": _finite_or_none(self.se_logD),
            "ci_alpha": [_finite_or_none(v) for v in self.ci_alpha],
            "ci_logD": [_finite_or_none(v) for v in self.ci_logD],
            "loglik": float(self.loglik),
            "params": {
                "phi": {k: float(v) for k, v in self.phi.items()},
                "beta": self.beta.tolist(),
                "sigma": self.sigma.tolist(),
            },
            "convergence": {
                "converged": bool(self.converged),
                "boundary": bool(self.boundary),
                "n_evals": int(self.n_evals),
                "n_restarts": int(self.n_restarts),
                "message": self.message,
            },
        }


def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


class _Objective:
    """Profile and full log-likelihood of one path as functions of ``u``."""

    def __init__(self, fam, increments, dt):
        self.fam = fam
        self.Y = increments
        self.dt = dt
        self.n, self.k = increments.shape
        self.n_evals = 0
        self._cache = {}

    def whitened(self, u):
        key = np.asarray(u, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is None:
            phi = self.fam.unpack(u, self.dt)
            if not self.fam.valid(phi):
                raise ValueError("noise filter outside the stationary/invertible region")
            acf = self.fam.acf(phi, self.dt, self.n)
            F = self.fam.drift(phi, self.dt, self.n)
            hit = _Whitened(acf, F, self.Y)
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def profile(self, u):
        self.n_evals += 1
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > _U_BOX:
            return -np.inf
        try:
            return self.whitened(u).profile()[2]
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            return -np.inf

    def full(self, theta, d):
        m = self.fam.dim
        u = theta[:m]
        beta = theta[m:m + d * self.k].reshape(d, self.k)
        chol = _chol_unpack(theta[m + d * self.k:], self.k)
        try:
            return self.whitened(u).loglik(beta, chol @ chol.T)
        except (ValueError, np.linalg.LinAlgError):
            return np.nan


def _simplex(x0, step, rng=None):
    m = x0.size
    pts = np.tile(x0, (m + 1, 1))
    for i in range(m):
        pts[i + 1, i] += step
    if rng is not None:
        pts[1:] += 0.5 * step * rng.standard_normal((m, m))
    return pts


def _hessian(fun, x, rel_step=1e-4):
    m = x.size
    h = rel_step * np.maximum(np.abs(x), 1.0)
    f0 = fun(x)
    H = np.empty((m, m))
    fp = np.empty(m)
    fm = np.empty(m)
    for i in range(m):
        e = np.zeros(m)
        e[i] = h[i]
        fp[i] = fun(x + e)
        fm[i] = fun(x - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(m):
        for j in range(i + 1, m):
            ei = np.zeros(m)
            ej = np.zeros(m)
            ei[i] = h[i]
            ej[j] = h[j]
            v = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej))
            H[i, j] = H[j, i] = v / (4.0 * h[i] * h[j])
    return H


def fit_mle(spec, positions, dt, seed=0, max_restarts=10, xatol=1e-8, start=None):
    """
    Maximum likelihood fit of a parametric `ModelSpec` to one path.

    The profile log-likelihood is maximized over the transformed kernel
    parameters by Nelder-Mead until the simplex diameter falls below
    `!xatol`. Each restart rebuilds a jittered simplex around the incumbent;
    restarts stop at the first one that does not improve the optimum, or
    after `!max_restarts`.

    Parameters
    ----------
    spec : ModelSpec
    positions : (N+1, k) array_like
        recorded positions; only the increments are used.
    dt : float
    seed : int
        seeds the restart jitter.
    max_restarts : int
    xatol : float
    start : array_like, optional
        initial transformed parameters.

    Returns
    -------
    FitResult

    Raises
    ------
    ConvergenceError
        if the simplex never meets the tolerance or no finite likelihood is found.
    """
    pos = np.asarray(positions, dtype=float)
    pos = pos.reshape(len(pos), -1)
    dx = np.diff(pos, axis=0)
    n, k = dx.shape
    if n < 2:
        raise ValueError("need at least 2 increments")
    fam = family(spec)
    obj = _Objective(fam, dx, dt)
    m = fam.dim
    negll = lambda u: -obj.profile(u)
    x0 = fam.start(dt) if start is None else np.asarray(start, dtype=float)
    if not np.isfinite(negll(x0)):
        raise ConvergenceError("likelihood is not finite at the starting point", [])
    opts = {"xatol": xatol, "fatol": np.inf, "maxiter": 1000 * m, "maxfev": 2000 * m}
    rng = substream(seed, "fit-restart", spec.kind)
    trace = []
    res = optimize.minimize(negll, x0, method="Nelder-Mead",
                            options=dict(opts, initial_simplex=_simplex(x0, 0.5)))
    trace.append((0, float(res.fun), int(res.nfev), bool(res.success)))
    best = res
    restarts = 0
    for r in range(1, max_restarts + 1):
        restarts = r
        res = optimize.minimize(negll, best.x, method="Nelder-Mead",
                                options=dict(opts, initial_simplex=_simplex(best.x, 0.25, rng)))
        trace.append((r, float(res.fun), int(res.nfev), bool(res.success)))
        improved = res.fun < best.fun - 1e-7 * max(1.0, abs(best.fun))
        if res.fun < best.fun:
            best = res
        if not improved:
            break
    if not np.isfinite(best.fun):
        raise ConvergenceError("no finite likelihood found", trace)
    if not any(t[3] for t in trace[-2:]):
        raise ConvergenceError("simplex did not contract below xatol", trace)

    u = np.asarray(best.x, dtype=float)
    phi = fam.unpack(u, dt)
    beta, sigma, ll = obj.whitened(u).profile()
    d = beta.shape[0]
    theta = np.concatenate([u, beta.ravel(), _chol_pack(sigma)])
    names = (list(fam.names) + [f"beta[{i},{j}]" for i in range(d) for j in range(k)]
             + [f"logchol[{i},{j}]" if i == j else f"chol[{i},{j}]"
                for i in range(k) for j in range(i + 1)])
    H = _hessian(lambda t: obj.full(t, d), theta)
    boundary = bool(np.any(np.abs(u) > _U_EDGE))
    vcov = np.full_like(H, np.nan)
    se_alpha = se_logD = np.nan
    message = "ok"
    if not np.all(np.isfinite(H)):
        boundary = True
        message = "Hessian not finite"
    else:
        info = -0.5 * (H + H.T)
        try:
            np.linalg.cholesky(info)
        except np.linalg.LinAlgError:
            boundary = True
            message = "observed information not positive definite"
        else:
            vcov = np.linalg.inv(info)
            alpha = phi["alpha"]
            g_alpha = alpha * (1.0 - alpha / 2.0)
            se_alpha = float(g_alpha * np.sqrt(vcov[0, 0]))
            off = m + d * k
            g = _logD_gradient(theta[off:], k)
            se_logD = float(np.sqrt(g @ vcov[off:, off:] @ g))
    if boundary and message == "ok":
        message = "transformed parameter near the edge of its range"
    D = float(np.trace(sigma) / (2.0 * k))
    return FitResult(spec=spec, phi={kk: float(v) for kk, v in phi.items()}, u=u, beta=beta,
                     sigma=sigma, loglik=ll, vcov=vcov, param_names=names,
                     alpha=float(phi["alpha"]), D=D, se_alpha=se_alpha, se_logD=se_logD,
                     converged=True, boundary=boundary, n_evals=obj.n_evals,
                     n_restarts=restarts, n=n, dt=dt, message=message, trace=trace)


# --- Kullback-Leibler misspecification -------------------------------------

def _sum_truncated_quadforms(v, acf):
    # sum_{m=1}^N v[:m]' T_m v[:m] for the leading blocks T_m of Toeplitz(acf)
    conv = signal.fftconvolve(v, acf)[:v.size]
    inc = 2.0 * v * conv - v * v * acf[0]
    return float(np.sum(np.cumsum(inc)))


def _trace_inv_product(cand_acf, true_acf):
    """``tr(Toeplitz(cand)^-1 Toeplitz(true))`` via the Gohberg-Semencul inverse."""
    n = cand_acf.size
    e0 = np.zeros(n)
    e0[0] = 1.0
    x, logdet = dl_solve(cand_acf, e0)
    y = np.concatenate([[0.0], x[:0:-1]])
    tr = (_sum_truncated_quadforms(x, true_acf) - _sum_truncated_quadforms(y, true_acf)) / x[0]
    return tr, logdet


def kl_objective(true_acf, true_sigma, cand_acf, cand_sigma, N, k):
    """
    Twice the Kullback-Leibler divergence of the candidate from the truth,
    up to the constant ``-N k``:

        tr(S*^-1 S) tr(V*^-1 V) + N log(|S*|/|S|) + k log(|V*|/|V|).

    Equals ``N k`` when candidate and truth coincide and exceeds it otherwise.
    """
    true_acf = np.asarray(true_acf, dtype=float)[:N]
    cand_acf = np.asarray(cand_acf, dtype=float)[:N]
    S = np.atleast_2d(np.asarray(true_sigma, dtype=float))
    Sc = np.atleast_2d(np.asarray(cand_sigma, dtype=float))
    if S.shape != (k, k) or Sc.shape != (k, k):
        raise ValueError(f"Sigma matrices must be {k} x {k}")
    tr_v, logdet_vc = _trace_inv_product(cand_acf, true_acf)
    _, logdet_v = dl_solve(true_acf, np.zeros(N))
    tr_s = float(np.trace(np.linalg.solve(Sc, S)))
    sgn_c, ld_sc = np.linalg.slogdet(Sc)
    sgn, ld_s = np.linalg.slogdet(S)
    if sgn_c <= 0 or sgn <= 0:
        raise np.linalg.LinAlgError("Sigma matrices must be positive definite")
    return tr_s * tr_v + N * (ld_sc - ld_s) + k * (logdet_vc - logdet_v)


def kl_best_fit(true_acf, true_sigma, spec, dt, N, start=None):
    """
    Candidate parameters of `!spec` (no drift) closest in KL divergence to the truth.

    For fixed kernel parameters the optimal candidate scale is
    ``Sigma* = Sigma tr(V*^-1 V) / N``; the remaining kernel parameters are
    found by Nelder-Mead.

    Returns
    -------
    dict
        ``phi``, ``sigma`` (the optimal ``Sigma*``), ``alpha``, ``D`` and ``objective``.
    """
    S = np.atleast_2d(np.asarray(true_sigma, dtype=float))
    k = S.shape[0]
    true_acf = np.asarray(true_acf, dtype=float)[:N]
    fam = family(spec)

    def profiled(u):
        if np.max(np.abs(u)) > _U_BOX:
            return np.inf
        phi = fam.unpack(u, dt)
        try:
            if not fam.valid(phi):
                return np.inf
            cand = fam.acf(phi, dt, N)
            tr_v, logdet_vc = _trace_inv_product(cand, true_acf)
        except (ValueError, np.linalg.LinAlgError):
            return np.inf
        c = tr_v / N
        # value at Sigma* = c Sigma, minus the constant k log|V|
        return k * N + N * k * np.log(c) + k * logdet_vc

    x0 = fam.start(dt) if start is None else np.asarray(start, dtype=float)
    res = optimize.minimize(profiled, x0, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": np.inf, "maxiter": 2000 * fam.dim,
                                     "initial_simplex": _simplex(x0, 0.5)})
    phi = fam.unpack(res.x, dt)
    cand = fam.acf(phi, dt, N)
    tr_v, _ = _trace_inv_product(cand, true_acf)
    sigma = S * tr_v / N
    value = kl_objective(true_acf, S, cand, sigma, N, k)
    return {"phi": phi, "sigma": sigma, "alpha": phi["alpha"],
            "D": float(np.trace(sigma) / (2 * k)), "objective": float(value)}
