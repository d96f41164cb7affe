"""
Continuous stationary-increments (CSI) kernels.

A mean-zero CSI Gaussian process is fully determined by its MSD ``eta(t)``.
Sampled on a uniform grid ``t = n*dt`` the increments are stationary with
autocovariance

    acf(n) = (eta(|n-1| dt) + eta((n+1) dt) - 2 eta(n dt)) / 2,

and conversely ``MSD(n) = n acf(0) + 2 sum_{h=1}^{n-1} (n-h) acf(h)``.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "fbm_msd",
    "fbm_cov",
    "fbm_acf",
    "msd_to_acf",
    "acf_to_msd",
    "msd_at_lag",
    "second_difference_power",
    "CsiKernel",
]

_SERIES_TERMS = 30
_SERIES_CUTOFF = 0.5


def _check_alpha(alpha):
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")


def fbm_msd(alpha, t):
    """MSD of standard fBM, ``|t|^alpha``."""
    _check_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    return t ** alpha


def fbm_cov(alpha, s, t):
    """Covariance of standard fBM at times `!s` and `!t`."""
    _check_alpha(alpha)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (np.abs(t) ** alpha + np.abs(s) ** alpha - np.abs(t - s) ** alpha)


def second_difference_power(t, h, a):
    """
    ``|t+h|^a + |t-h|^a - 2|t|^a`` without cancellation.

    When ``h/|t|`` is small the direct formula loses about ``2 log10(|t|/h)``
    digits; there the even binomial series ``2|t|^a sum_m C(a, 2m) (h/t)^(2m)``
    is summed instead.
    """
    t = np.abs(np.asarray(t, dtype=float))
    out = np.empty_like(t)
    with np.errstate(divide="ignore"):
        ratio = np.where(t > 0, h / np.where(t > 0, t, 1.0), np.inf)
    small = ratio <= _SERIES_CUTOFF
    big = ~small
    tb = t[big]
    out[big] = np.abs(tb + h) ** a + np.abs(tb - h) ** a - 2.0 * tb ** a
    if np.any(small):
        x2 = ratio[small] ** 2
        coef = special.binom(a, 2 * np.arange(1, _SERIES_TERMS + 1))
        acc = np.zeros_like(x2)
        for c in coef[::-1]:
            acc = (acc + c) * x2
        out[small] = 2.0 * t[small] ** a * acc
    return out


def fbm_acf(alpha, dt, n):
    """Increment autocovariance of standard fBM sampled every `!dt`, lags ``0..n-1``."""
    _check_alpha(alpha)
    return 0.5 * dt ** alpha * second_difference_power(np.arange(n, dtype=float), 1.0, alpha)


def msd_to_acf(msd):
    """
    Increment autocovariance from an MSD sampled at lags ``0..N``.

    Parameters
    ----------
    msd : (N+1,) array_like
        ``eta(0), eta(dt), ..., eta(N dt)``; ``msd[0]`` should be 0.

    Returns
    -------
    (N,) np.ndarray
        ``acf(0..N-1)``.
    """
    eta = np.asarray(msd, dtype=float)
    if eta.ndim != 1 or eta.size < 2:
        raise ValueError("msd must hold at least lags 0 and 1")
    n = eta.size - 1
    prev = np.empty(n)
    prev[0] = eta[1]
    prev[1:] = eta[:n - 1]
    return 0.5 * (prev + eta[1:] - 2.0 * eta[:n])


def acf_to_msd(acf):
    """
    MSD at lags ``1..N`` from the increment autocovariance ``acf(0..N-1)``.

    Uses ``MSD(n) - MSD(n-1) = acf(0) + 2 sum_{h=1}^{n-1} acf(h)``.
    """
    acf = np.asarray(acf, dtype=float)
    step = 2.0 * np.cumsum(acf) - acf[0]
    return np.cumsum(step)


def msd_at_lag(acf, n):
    """``MSD(n) = n acf(0) + 2 sum_{h=1}^{n-1} (n-h) acf(h)`` for a single lag."""
    acf = np.asarray(acf, dtype=float)
    if n < 1 or n > acf.size:
        raise ValueError(f"lag {n} outside 1..{acf.size}")
    h = np.arange(1, n)
    return n * acf[0] + 2.0 * np.dot(n - h, acf[1:n])


@dataclass(frozen=True)
class CsiKernel:
    """
    MSD ``eta(t | phi)`` of the driving CSI process.

    Parameters
    ----------
    variant : {'fbm', 'gle', 'empirical'}
    alpha : float, optional
        fBM exponent.
    gle : subdiff.gle.GleSpec, optional
    table : tuple of (lags, msd), optional
        empirical MSD on the lag grid (lag 0 may be omitted).
    """
    variant: str
    alpha: float = None
    gle: object = None
    table: tuple = None

    def __post_init__(self):
        if self.variant == "fbm":
            _check_alpha(self.alpha)
        elif self.variant == "gle":
            if self.gle is None:
                raise ValueError("gle kernel needs a GleSpec")
        elif self.variant == "empirical":
            if self.table is None:
                raise ValueError("empirical kernel needs an MSD table")
        else:
            raise ValueError(f"unknown kernel variant {self.variant!r}")

    def msd(self, t):
        """Evaluate ``eta`` at times `!t` (seconds)."""
        t = np.asarray(t, dtype=float)
        if self.variant == "fbm":
            return fbm_msd(self.alpha, t)
        if self.variant == "gle":
            from .gle import gle_msd
            flat = t.ravel()
            out = np.zeros_like(flat)
            pos = flat > 0
            out[pos] = gle_msd(self.gle, flat[pos])
            return out.reshape(t.shape)
        raise TypeError("empirical kernels are only defined on their lag grid; use msd_grid")

    def msd_grid(self, dt, n):
        """``eta`` on the lag grid ``0, dt, ..., n dt``."""
        if self.variant == "empirical":
            lags, values = (np.asarray(a, dtype=float) for a in self.table)
            if lags[0] != 0:
                lags = np.concatenate([[0.0], lags])
                values = np.concatenate([[0.0], values])
            if lags.size < n + 1 or np.any(lags[:n + 1] != np.arange(n + 1)):
                raise ValueError(f"empirical MSD table must cover lags 0..{n}")
            return values[:n + 1]
        return self.msd(dt * np.arange(n + 1))

    def acf(self, dt, n):
        """Increment autocovariance at lags ``0..n-1``."""
        if self.variant == "fbm":
            return fbm_acf(self.alpha, dt, n)
        return msd_to_acf(self.msd_grid(dt, n))
