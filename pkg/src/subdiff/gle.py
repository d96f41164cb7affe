"""
Massless generalized Langevin equation with a Rouse memory kernel.

The kernel is ``phi(t) = (nu/K) sum_k exp(-|t| a_k)`` with relaxation rates
``a_k = 1/tau_k`` and ``tau_k = tau (K/k)^gamma``. With zero mass the
Laplace transform of the MSD is ``2 kT / (s^2 phi~(s))`` where
``phi~(s) = (nu/K) sum_k 1/(s + a_k)``. Partial fractions of
``1/sum_k 1/(s + a_k)`` give

    MSD(t) = (2 kT K / nu) * ( t / sum_k tau_k
                               + sum_j w_j (1 - exp(-r_j t)) ),

where ``-r_j`` are the ``K-1`` zeros of ``sum_k 1/(s + a_k)`` (one in each
gap between consecutive rates) and ``w_j = 1 / (r_j^2 sum_k (a_k - r_j)^-2)``.
The constant term of the partial fraction expansion is the short-time
inertial plateau of a vanishing-mass limit and is dropped, so that
``MSD(0) = 0``.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = ["GleSpec", "SubdiffusionWindow", "gle_roots", "gle_msd", "window_grid",
           "extract_window", "NoWindowError"]

_BISECT_ITER = 200


@dataclass(frozen=True)
class GleSpec:
    """
    Rouse-kernel GLE parameters.

    Parameters
    ----------
    K : int
        number of modes.
    rouse_gamma : float
        mode-spacing exponent; the mid-range MSD exponent is about ``1/rouse_gamma``.
    rouse_tau : float
        shortest relaxation time (seconds).
    nu : float
        kernel amplitude, ``phi(0) = nu``.
    kT : float
        thermal energy in the same units as ``nu * tau``.
    """
    K: int
    rouse_gamma: float
    rouse_tau: float
    nu: float = 1.0
    kT: float = 1.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")
        if not self.rouse_tau > 0 or not self.nu > 0 or not self.rouse_gamma > 0:
            raise ValueError("rouse_tau, nu and rouse_gamma must be positive")
        if not self.kT > 0:
            raise ValueError("kT must be positive")

    @property
    def taus(self):
        k = np.arange(1, self.K + 1)
        return self.rouse_tau * (self.K / k) ** self.rouse_gamma

    @property
    def rates(self):
        """Relaxation rates ``1/tau_k`` in increasing order."""
        return np.sort(1.0 / self.taus)

    @property
    def amplitude(self):
        return 2.0 * self.kT * self.K / self.nu

    @property
    def d_short(self):
        """Short-time diffusivity, ``kT mean(a_k) / nu``."""
        return self.kT * np.mean(self.rates) / self.nu

    @property
    def d_long(self):
        """Long-time diffusivity, ``kT K / (nu sum(tau_k))``."""
        return self.kT * self.K / (self.nu * np.sum(self.taus))


@dataclass(frozen=True)
class SubdiffusionWindow:
    t_min: float
    t_max: float
    alpha_eff: float
    D_eff: float
    kappa: float
    max_residual: float = np.nan


class NoWindowError(ValueError):
    pass


def _root_offsets(spec):
    # rates a and, per gap j, the root position u_j in (0, 1) along the gap
    a = spec.rates
    if a.size < 2:
        return a, np.empty(0)
    gap = np.diff(a)
    if np.any(gap <= 0):
        raise ValueError("relaxation rates must be distinct for root interlacing")
    # base[j, k] = a_j - a_k, exact for neighbouring rates
    base = a[:-1, None] - a[None, :]
    lo = np.zeros_like(gap)
    hi = np.ones_like(gap)
    for _ in range(_BISECT_ITER):
        mid = 0.5 * (lo + hi)
        # sum_k 1/(y - a_k) decreases from +inf to -inf across each gap
        f = np.sum(1.0 / (base + (gap * mid)[:, None]), axis=1)
        pos = f > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.all(hi - lo <= 2 * np.finfo(float).eps * mid):
            break
    u = 0.5 * (lo + hi)
    if not np.all((u > 0) & (u < 1)):
        raise ArithmeticError("GLE root bisection left its bracketing interval")
    return a, u


def gle_roots(spec):
    """
    Positive ``r_j`` with ``sum_k 1/(r_j - a_k) = 0``, ``j = 1..K-1``.

    Each root lies strictly between consecutive rates ``a_j < r_j < a_{j+1}``;
    all are located at once by bisection on the fractional position in the gap.
    """
    a, u = _root_offsets(spec)
    return a[:-1] + np.diff(a) * u


def _weights(spec):
    a, u = _root_offsets(spec)
    if u.size == 0:
        return np.empty(0), np.empty(0)
    gap = np.diff(a)
    r = a[:-1] + gap * u
    diff = (a[:-1, None] - a[None, :]) + (gap * u)[:, None]  # r_j - a_k
    denom = np.sum(1.0 / diff ** 2, axis=1)
    return r, 1.0 / (r ** 2 * denom)


def gle_msd(spec, t_grid):
    """
    MSD of the Rouse GLE at times `!t_grid` (seconds, positive).

    Parameters
    ----------
    spec : GleSpec
    t_grid : array_like

    Returns
    -------
    np.ndarray
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("t_grid must be nonnegative")
    r, w = _weights(spec)
    flat = t.ravel()
    lin = flat / np.sum(spec.taus)
    if r.size:
        sat = -np.expm1(-np.multiply.outer(flat, r)) @ w
    else:
        sat = 0.0
    return (spec.amplitude * (lin + sat)).reshape(t.shape)


def window_grid(spec, n=512):
    """Log-spaced grid from ``tau/100`` to ``100 K^gamma tau``."""
    t0 = spec.rouse_tau / 100.0
    t1 = 100.0 * spec.K ** spec.rouse_gamma * spec.rouse_tau
    return np.logspace(np.log10(t0), np.log10(t1), n)


@njit(cache=True)
def _best_window(x, y, kappa):
    n = x.size
    best_i, best_j = -1, -1
    best_w = -1.0
    best_res = np.inf
    for i in range(n):
        sx = 0.0
        sy = 0.0
        sxx = 0.0
        sxy = 0.0
        for j in range(i, n):
            sx += x[j]
            sy += y[j]
            sxx += x[j] * x[j]
            sxy += x[j] * y[j]
            m = j - i + 1
            if m < 3:
                continue
            width = x[j] - x[i]
            if width < best_w:
                continue
            xbar = sx / m
            ybar = sy / m
            slope = (sxy - m * xbar * ybar) / (sxx - m * xbar * xbar)
            icpt = ybar - slope * xbar
            res = 0.0
            for l in range(i, j + 1):
                num = abs(slope * x[l] + icpt - y[l])
                if num == 0.0:
                    continue
                if y[l] == 0.0:
                    res = np.inf
                    break
                res = max(res, num / abs(y[l]))
                if res >= kappa:
                    break
            if res < kappa and (width > best_w or res < best_res):
                best_w = width
                best_i = i
                best_j = j
                best_res = res
    return best_i, best_j, best_res


def extract_window(t, msd, kappa=0.01):
    """
    Widest log-time window over which the MSD is a power law to within `!kappa`.

    Every pair of grid points is tried; the window is feasible when the
    least-squares line through ``(log t, log msd)`` has maximal relative
    residual ``|fit - log msd| / |log msd|`` below `!kappa`.

    Parameters
    ----------
    t : (n,) array_like
        increasing positive times.
    msd : (n,) array_like
        positive MSD values on `!t`.
    kappa : float

    Returns
    -------
    SubdiffusionWindow
    """
    t = np.asarray(t, dtype=float)
    msd = np.asarray(msd, dtype=float)
    if t.shape != msd.shape or t.ndim != 1:
        raise ValueError("t and msd must be 1-d arrays of equal length")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t must be positive and strictly increasing")
    if np.any(msd <= 0):
        raise ValueError("msd must be positive")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    x, y = np.log(t), np.log(msd)
    i, j, res = _best_window(x, y, float(kappa))
    if i < 0:
        raise NoWindowError(f"no window of at least 3 points fits a power law within kappa={kappa}")
    slope, icpt = np.polyfit(x[i:j + 1], y[i:j + 1], 1)
    return SubdiffusionWindow(t_min=float(t[i]), t_max=float(t[j]), alpha_eff=float(slope),
                              D_eff=float(0.5 * np.exp(icpt)), kappa=float(kappa),
                              max_residual=float(res))
