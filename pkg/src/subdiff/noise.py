"""
High-frequency noise filters.

Two families act on the increment autocovariance ``acf`` of the true process:

+ Savin-Doyle localization error: exposure-window averaging of the true path
  (dynamic error, `sd_dynamic_acf`) plus additive white position noise (static
  error, `sd_static_acf`).
+ ARMA(p, q) filters of the true increments,

      dY_n = sum_i theta_i dY_{n-i} + sum_j rho_j dX_{n-j},

  with ``rho_0 = 1 - sum(theta) - sum(rho_1..q)`` so that the filtered MSD
  matches the true one at long lags. `ArmaFilter` always derives ``rho_0``
  from that restriction.
"""
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .csi import fbm_acf, msd_at_lag, second_difference_power
from .toeplitz import toeplitz_matvec

__all__ = [
    "ArmaFilter",
    "SavinDoyleNoise",
    "sd_dynamic_acf",
    "sd_static_acf",
    "ma_acf",
    "ar_to_ma",
    "power_coefficients",
    "arma_filtered_acf",
    "required_base_length",
    "filtered_drift",
    "filter_increments",
    "hf_ratio_check",
    "DEFAULT_AR_ORDER",
]

DEFAULT_AR_ORDER = 50
_ROOT_MARGIN = 1e-9


def _trim(coefs):
    coefs = [float(c) for c in coefs]
    while coefs and coefs[-1] == 0.0:
        coefs.pop()
    return tuple(coefs)


@dataclass(frozen=True)
class ArmaFilter:
    """
    Restricted ARMA(p, q) noise filter.

    Parameters
    ----------
    theta : sequence of float
        autoregressive coefficients ``theta_1..theta_p``.
    rho : sequence of float
        moving-average coefficients ``rho_1..rho_q``.

    Notes
    -----
    Trailing zero coefficients are dropped, so ``ArmaFilter(rho=[0])`` is the
    identity filter.
    """
    theta: tuple = ()
    rho: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "theta", _trim(self.theta))
        object.__setattr__(self, "rho", _trim(self.rho))
        if not all(np.isfinite(self.theta + self.rho)):
            raise ValueError("filter coefficients must be finite")

    @classmethod
    def fma(cls, rho):
        """MA(1) filter ``Y_n = (1-rho) X_n + rho X_{n-1}``."""
        return cls(rho=(rho,))

    @property
    def p(self):
        return len(self.theta)

    @property
    def q(self):
        return len(self.rho)

    @property
    def rho0(self):
        return 1.0 - sum(self.theta) - sum(self.rho)

    @property
    def ma_coefficients(self):
        """``(rho_0, rho_1, ..., rho_q)``."""
        return np.array((self.rho0,) + self.rho)

    @property
    def ar_coefficients(self):
        return np.array(self.theta)

    @property
    def is_identity(self):
        return self.p == 0 and self.q == 0

    def root_moduli(self):
        """Smallest root modulus of ``1 - theta(z)`` and of ``rho_0 - sum rho_j z^j``."""
        def smallest(poly_low_to_high):
            poly = np.trim_zeros(np.asarray(poly_low_to_high, dtype=float), "b")
            if poly.size <= 1:
                return np.inf if poly.size and poly[0] != 0 else 0.0
            if poly[0] == 0.0:
                return 0.0
            return float(np.min(np.abs(np.roots(poly[::-1]))))
        ar = smallest(np.concatenate([[1.0], -self.ar_coefficients]))
        ma = smallest(np.concatenate([[self.rho0], -np.array(self.rho)]))
        return ar, ma

    def is_valid(self):
        """Stationary and invertible with all roots outside ``|z| <= 1 + 1e-9``."""
        ar, ma = self.root_moduli()
        return ar > 1.0 + _ROOT_MARGIN and ma > 1.0 + _ROOT_MARGIN

    def validate(self):
        ar, ma = self.root_moduli()
        if not ar > 1.0 + _ROOT_MARGIN:
            raise ValueError(f"AR polynomial has a root of modulus {ar:.6g} inside the unit disk")
        if not ma > 1.0 + _ROOT_MARGIN:
            raise ValueError(f"MA polynomial has a root of modulus {ma:.6g} inside the unit disk")
        return self


@dataclass(frozen=True)
class SavinDoyleNoise:
    """
    Savin-Doyle error: exposure time `!exposure_time` (seconds, ``0 <= tau < dt``)
    and white static noise with standard deviation `!static_scale` relative to
    the diffusion scale.
    """
    exposure_time: float = 0.0
    static_scale: float = 0.0
    estimate_tau: bool = True

    def __post_init__(self):
        if self.exposure_time < 0 or self.static_scale < 0:
            raise ValueError("exposure_time and static_scale must be nonnegative")

    def acf(self, alpha, dt, n_lags):
        if self.exposure_time >= dt:
            raise ValueError("exposure time must be shorter than the frame interval")
        return (sd_dynamic_acf(alpha, self.exposure_time, dt, n_lags)
                + sd_static_acf(self.static_scale, n_lags))


def _g_tau(t, tau, alpha):
    a = alpha + 2.0
    return second_difference_power(t, tau, a) / (2.0 * tau ** 2 * (alpha + 1.0) * a)


def sd_dynamic_acf(alpha, tau, dt, n_lags):
    """
    Increment autocovariance of exposure-averaged standard fBM.

    Parameters
    ----------
    alpha : float
    tau : float
        exposure time, ``0 <= tau < dt``; ``tau = 0`` returns the fBM acf.
    dt : float
    n_lags : int

    Returns
    -------
    (n_lags,) np.ndarray
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if not 0.0 <= tau < dt:
        raise ValueError(f"exposure time must satisfy 0 <= tau < dt, got {tau}")
    if tau == 0.0:
        return fbm_acf(alpha, dt, n_lags)
    g = _g_tau(dt * np.arange(n_lags + 1, dtype=float), tau, alpha)
    g_prev = np.empty(n_lags)
    g_prev[0] = g[1]
    g_prev[1:] = g[:n_lags - 1]
    return g[1:] + g_prev - 2.0 * g[:n_lags]


def sd_static_acf(sigma, n_lags):
    """Increment autocovariance ``sigma^2 (2, -1, 0, ...)`` of white position noise."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    out = np.zeros(n_lags)
    s2 = float(sigma) ** 2
    out[0] = 2.0 * s2
    if n_lags > 1:
        out[1] = -s2
    return out


def ma_acf(coefs, base, n_lags):
    """
    Autocovariance of ``dY_n = sum_{i=0}^q c_i dX_{n-i}`` at lags ``0..n_lags-1``.

    Computes ``sum_i sum_j c_i c_j base(n + i - j)`` as two Toeplitz
    matrix-vector products done by FFT.

    Parameters
    ----------
    coefs : (q+1,) array_like
        ``c_0..c_q``.
    base : array_like
        ``acf_dX`` at lags ``0..n_lags+q-1`` (longer is fine).
    n_lags : int
    """
    c = np.asarray(coefs, dtype=float)
    q = c.size - 1
    base = np.asarray(base, dtype=float)
    m = n_lags + q
    if base.size < m:
        raise ValueError(f"base acf needs {m} lags, got {base.size}")
    if q == 0:
        return c[0] ** 2 * base[:n_lags]
    eta = base[:m]
    # v[m] = sum_j c_j eta(|m - j|), m = 0..n+q-1
    v = toeplitz_matvec(eta[:q + 1], eta, c)
    row = np.zeros(m)
    row[:q + 1] = c
    col = np.zeros(n_lags)
    col[0] = c[0]
    return toeplitz_matvec(row, col, v)


def ar_to_ma(theta, order=DEFAULT_AR_ORDER):
    """
    Power-series coefficients ``psi_0..psi_order`` of ``1/(1 - theta(z))``.

    With ``g(z) = theta(z)/z``, ``psi_i = sum_{j=1}^i [z^(i-j)] g(z)^j``; the
    coefficients of each power ``g^j`` follow from the recursion obtained by
    matching coefficients in ``G' g = j g' G`` for ``G = g^j``. That recursion
    divides by ``theta_1``; when ``theta_1 == 0`` the expansion falls back to
    direct series division ``psi_i = sum_k theta_k psi_{i-k}``.
    """
    a = np.asarray(theta, dtype=float)
    psi = np.zeros(order + 1)
    psi[0] = 1.0
    if a.size == 0 or order == 0:
        return psi
    if a[0] == 0.0:
        return _series_division(a, order)
    for j in range(1, order + 1):
        b = power_coefficients(a, j, order - j + 1)
        psi[j:] += b
    return psi


def power_coefficients(a, n, length):
    """
    First `!length` coefficients of ``g(x)^n`` for ``g(x) = sum_k a_k x^k``, ``a_0 != 0``.

    Matching coefficients of ``x^(k-1)`` in ``G' g = n g' G`` with ``G = g^n``
    gives ``b_0 = a_0^n`` and, for ``k >= 1``,

        b_k = [n k a_k b_0 + sum_{i=1}^{k-1} (k-i)(n b_i a_{k-i} - a_i b_{k-i})] / (k a_0).
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0 or a[0] == 0.0:
        raise ValueError("leading coefficient must be nonzero")
    a_pad = np.zeros(max(length, a.size))
    a_pad[:a.size] = a
    # g^n has degree n (p - 1); later coefficients vanish
    kmax = min(length - 1, n * (a.size - 1))
    b = np.zeros(length)
    b[0] = a[0] ** n
    for k in range(1, kmax + 1):
        i = np.arange(1, k)
        s = n * k * b[0] * a_pad[k]
        s += np.sum((k - i) * (n * b[i] * a_pad[k - i] - a_pad[i] * b[k - i]))
        b[k] = s / (k * a[0])
    return b


def _series_division(theta, order):
    psi = np.zeros(order + 1)
    psi[0] = 1.0
    for i in range(1, order + 1):
        k = np.arange(1, min(i, theta.size) + 1)
        psi[i] = np.dot(theta[k - 1], psi[i - k])
    return psi


def required_base_length(filt, n_lags, ar_order=DEFAULT_AR_ORDER):
    """Number of base acf lags `arma_filtered_acf` needs for `!n_lags` output lags."""
    return n_lags + filt.q + (ar_order if filt.p > 0 else 0)


def arma_filtered_acf(filt, base, n_lags, ar_order=DEFAULT_AR_ORDER):
    """
    Increment autocovariance of the ARMA-filtered process.

    The MA part is applied exactly; the AR part is replaced by its MA(`!ar_order`)
    truncation and applied to the result.

    Parameters
    ----------
    filt : ArmaFilter
    base : array_like
        true increment acf, at least `required_base_length` lags.
    n_lags : int
    ar_order : int

    Returns
    -------
    (n_lags,) np.ndarray
    """
    base = np.asarray(base, dtype=float)
    need = required_base_length(filt, n_lags, ar_order)
    if base.size < need:
        raise ValueError(f"base acf needs {need} lags, got {base.size}")
    if filt.is_identity:
        return base[:n_lags].copy()
    if filt.p == 0:
        return ma_acf(filt.ma_coefficients, base, n_lags)
    inner = ma_acf(filt.ma_coefficients, base, n_lags + ar_order)
    return ma_acf(ar_to_ma(filt.theta, ar_order), inner, n_lags)


def filtered_drift(filt, delta_f):
    """
    Drift increments after filtering: ``F_n = sum_i theta_i F_{n-i} + sum_j rho_j df_{n-j}``.

    Drift is zero before the first observation, so sums are truncated at ``n``.

    Parameters
    ----------
    filt : ArmaFilter
    delta_f : (N,) or (N, d) array_like

    Returns
    -------
    np.ndarray, same shape as `!delta_f`
    """
    df = np.asarray(delta_f, dtype=float)
    if filt.is_identity or df.size == 0:
        return df.copy()
    a = np.concatenate([[1.0], -filt.ar_coefficients])
    return signal.lfilter(filt.ma_coefficients, a, df, axis=0)


def filter_increments(filt, dx, burn=None):
    """
    Apply the filter recursion to a path of true increments.

    The first `!burn` increments (default ``10 (p + q + 1)``) are treated as
    pre-sample history and dropped from the output.
    """
    dx = np.asarray(dx, dtype=float)
    if burn is None:
        burn = 10 * (filt.p + filt.q + 1)
    a = np.concatenate([[1.0], -filt.ar_coefficients])
    return signal.lfilter(filt.ma_coefficients, a, dx, axis=0)[burn:]


def hf_ratio_check(filt, base, n_probe, ar_order=DEFAULT_AR_ORDER):
    """
    ``MSD_Y(n_probe) / MSD_X(n_probe)`` for the filtered and true processes.

    Close to 1 for large `!n_probe` exactly when ``rho_0`` obeys the restriction.

    Parameters
    ----------
    filt : ArmaFilter
    base : array_like
        true increment acf with at least ``required_base_length(filt, n_probe)`` lags.
    n_probe : int
    """
    base = np.asarray(base, dtype=float)
    filtered = arma_filtered_acf(filt, base, n_probe, ar_order)
    return msd_at_lag(filtered, n_probe) / msd_at_lag(base, n_probe)
