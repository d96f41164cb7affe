"""
Estimator zoo: model specifications, parameter transforms, and the LS estimator.

Each parametric kind maps an unconstrained vector ``u`` to kernel/noise
parameters ``phi``, an increment autocovariance, and a drift matrix. The
exponent is always ``alpha = 2 logistic(u[0])``.

======== ============================= =====================================
kind     phi                           transforms of u[1:]
======== ============================= =====================================
fbm      alpha                         none
fsd      alpha, tau, sigma             tau = dt logistic, sigma = exp
fma      alpha, rho                    rho = -1 + 1.5 logistic
fma2     alpha, rho1, rho2             identity, invalid filters rejected
farma11  alpha, theta, rho             identity, invalid filters rejected
fmas     alpha, rho, sigma             as fma, sigma = exp
======== ============================= =====================================
"""
from dataclasses import dataclass, field
import json

import numpy as np
from scipy.special import expit, logit

from .csi import fbm_acf
from .noise import (ArmaFilter, DEFAULT_AR_ORDER, arma_filtered_acf, filtered_drift,
                    required_base_length, sd_dynamic_acf, sd_static_acf)

__all__ = [
    "KINDS",
    "DRIFTS",
    "ModelSpec",
    "family",
    "drift_increments",
    "LsResult",
    "ls_fit",
    "report_D",
]

KINDS = ("ls", "fbm", "fsd", "fma", "fma2", "farma11", "fmas")
DRIFTS = ("none", "linear", "quadratic")
_OPTIONS = {
    "ls": {"fraction"},
    "fbm": set(),
    "fsd": {"fix_tau"},
    "fma": set(),
    "fma2": set(),
    "farma11": {"ar_order"},
    "fmas": set(),
}


def _parse_value(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


@dataclass(frozen=True)
class ModelSpec:
    """
    Declarative model description.

    Parameters
    ----------
    kind : str
        one of `KINDS`.
    drift : str
        ``'none'``, ``'linear'`` (default) or ``'quadratic'``.
    options : tuple of (str, value)
        ``fraction`` for ls; ``fix_tau`` (seconds) for fsd; ``ar_order`` for farma11.
    """
    kind: str
    drift: str = "linear"
    options: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}; choose from {', '.join(DRIFTS)}")
        opts = dict(self.options)
        bad = set(opts) - _OPTIONS[self.kind]
        if bad:
            raise ValueError(f"options {sorted(bad)} not valid for {self.kind}")
        if "fraction" in opts and not 0 < opts["fraction"] <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if "fix_tau" in opts and not opts["fix_tau"] >= 0:
            raise ValueError("fix_tau must be nonnegative")
        if "ar_order" in opts and (int(opts["ar_order"]) != opts["ar_order"] or opts["ar_order"] < 1):
            raise ValueError("ar_order must be a positive integer")
        object.__setattr__(self, "options", tuple(sorted(opts.items())))

    def option(self, key, default=None):
        return dict(self.options).get(key, default)

    def to_dict(self):
        return {"kind": self.kind, "drift": self.drift, "options": dict(self.options)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("drift", "linear"), tuple(d.get("options", {}).items()))

    def to_string(self):
        """``kind[:drift=..,key=value,...]``, parsed back by `from_string`."""
        parts = [f"drift={self.drift}"] + [f"{k}={v!r}" for k, v in self.options]
        return f"{self.kind}:" + ",".join(parts)

    @classmethod
    def from_string(cls, text):
        kind, _, rest = text.strip().partition(":")
        drift = "linear"
        opts = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, sep, val = item.partition("=")
            if not sep:
                raise ValueError(f"malformed model option {item!r}")
            if key == "drift":
                drift = val
            else:
                opts[key] = _parse_value(val)
        return cls(kind, drift, tuple(opts.items()))

    def __str__(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def drift_increments(drift, dt, n, tau=0.0):
    """
    Drift design matrix ``F[n, m] = f_m((n+1) dt) - f_m(n dt)``.

    With ``tau > 0`` the drift functions are first averaged over the exposure
    window ``[t - tau, t]``; this only changes the quadratic column.
    """
    t = dt * np.arange(n + 1)
    if drift == "none":
        return np.zeros((n, 0))
    cols = [np.full(n, dt)]
    if drift == "quadratic":
        # (1/tau) int_0^tau (t-s)^2 ds = t^2 - tau t + tau^2/3
        cols.append(np.diff(t ** 2 - tau * t))
    elif drift != "linear":
        raise ValueError(f"unknown drift {drift!r}")
    return np.column_stack(cols)


class _Family:
    kind = None
    names = ()

    def __init__(self, spec):
        self.spec = spec

    @property
    def dim(self):
        return len(self.names)

    def unpack(self, u, dt):
        raise NotImplementedError

    def pack(self, phi, dt):
        raise NotImplementedError

    def start(self, dt):
        raise NotImplementedError

    def acf(self, phi, dt, n):
        raise NotImplementedError

    def noise_filter(self, phi):
        return ArmaFilter()

    def drift(self, phi, dt, n):
        return filtered_drift(self.noise_filter(phi), drift_increments(self.spec.drift, dt, n))

    def valid(self, phi):
        return True

    @staticmethod
    def _alpha(u0):
        return 2.0 * expit(u0)

    @staticmethod
    def _u_alpha(alpha):
        return logit(alpha / 2.0)


class _Fbm(_Family):
    kind = "fbm"
    names = ("alpha",)

    def unpack(self, u, dt):
        return {"alpha": self._alpha(u[0])}

    def pack(self, phi, dt):
        return np.array([self._u_alpha(phi["alpha"])])

    def start(self, dt):
        return np.zeros(1)

    def acf(self, phi, dt, n):
        return fbm_acf(phi["alpha"], dt, n)


class _Fsd(_Family):
    kind = "fsd"

    @property
    def fixed_tau(self):
        return self.spec.option("fix_tau")

    @property
    def names(self):
        return ("alpha", "sigma") if self.fixed_tau is not None else ("alpha", "tau", "sigma")

    def unpack(self, u, dt):
        if self.fixed_tau is not None:
            return {"alpha": self._alpha(u[0]), "tau": float(self.fixed_tau), "sigma": float(np.exp(u[1]))}
        return {"alpha": self._alpha(u[0]), "tau": dt * expit(u[1]), "sigma": float(np.exp(u[2]))}

    def pack(self, phi, dt):
        a = self._u_alpha(phi["alpha"])
        s = np.log(phi["sigma"])
        if self.fixed_tau is not None:
            return np.array([a, s])
        return np.array([a, logit(phi["tau"] / dt), s])

    def start(self, dt):
        return self.pack({"alpha": 1.0, "tau": dt / 10, "sigma": 0.1}, dt)

    def acf(self, phi, dt, n):
        return sd_dynamic_acf(phi["alpha"], phi["tau"], dt, n) + sd_static_acf(phi["sigma"], n)

    def drift(self, phi, dt, n):
        return drift_increments(self.spec.drift, dt, n, tau=phi["tau"])


class _Fma(_Family):
    kind = "fma"
    names = ("alpha", "rho")

    def unpack(self, u, dt):
        return {"alpha": self._alpha(u[0]), "rho": -1.0 + 1.5 * expit(u[1])}

    def pack(self, phi, dt):
        return np.array([self._u_alpha(phi["alpha"]), logit((phi["rho"] + 1.0) / 1.5)])

    def start(self, dt):
        return self.pack({"alpha": 1.0, "rho": 0.0}, dt)

    def noise_filter(self, phi):
        return ArmaFilter(rho=(phi["rho"],))

    def acf(self, phi, dt, n):
        filt = self.noise_filter(phi)
        return arma_filtered_acf(filt, fbm_acf(phi["alpha"], dt, n + 1), n)


class _Fma2(_Family):
    kind = "fma2"
    names = ("alpha", "rho1", "rho2")

    def unpack(self, u, dt):
        return {"alpha": self._alpha(u[0]), "rho1": float(u[1]), "rho2": float(u[2])}

    def pack(self, phi, dt):
        return np.array([self._u_alpha(phi["alpha"]), phi["rho1"], phi["rho2"]])

    def start(self, dt):
        return np.zeros(3)

    def noise_filter(self, phi):
        return ArmaFilter(rho=(phi["rho1"], phi["rho2"]))

    def valid(self, phi):
        return self.noise_filter(phi).is_valid()

    def acf(self, phi, dt, n):
        filt = self.noise_filter(phi)
        return arma_filtered_acf(filt, fbm_acf(phi["alpha"], dt, n + 2), n)


class _Farma11(_Family):
    kind = "farma11"
    names = ("alpha", "theta", "rho")

    @property
    def ar_order(self):
        return int(self.spec.option("ar_order", DEFAULT_AR_ORDER))

    def unpack(self, u, dt):
        return {"alpha": self._alpha(u[0]), "theta": float(u[1]), "rho": float(u[2])}

    def pack(self, phi, dt):
        return np.array([self._u_alpha(phi["alpha"]), phi["theta"], phi["rho"]])

    def start(self, dt):
        return np.zeros(3)

    def noise_filter(self, phi):
        return ArmaFilter(theta=(phi["theta"],), rho=(phi["rho"],))

    def valid(self, phi):
        return self.noise_filter(phi).is_valid()

    def acf(self, phi, dt, n):
        filt = self.noise_filter(phi)
        m = required_base_length(filt, n, self.ar_order)
        return arma_filtered_acf(filt, fbm_acf(phi["alpha"], dt, m), n, self.ar_order)


class _Fmas(_Fma):
    kind = "fmas"
    names = ("alpha", "rho", "sigma")

    def unpack(self, u, dt):
        out = super().unpack(u, dt)
        out["sigma"] = float(np.exp(u[2]))
        return out

    def pack(self, phi, dt):
        return np.append(super().pack(phi, dt), np.log(phi["sigma"]))

    def start(self, dt):
        return self.pack({"alpha": 1.0, "rho": 0.0, "sigma": 0.1}, dt)

    def acf(self, phi, dt, n):
        # static noise is added after filtering, unfiltered itself
        return super().acf(phi, dt, n) + sd_static_acf(phi["sigma"], n)


_FAMILIES = {c.kind: c for c in (_Fbm, _Fsd, _Fma, _Fma2, _Farma11, _Fmas)}


def family(spec):
    """Parameter family object for a parametric `ModelSpec`."""
    if spec.kind == "ls":
        raise ValueError("ls is semiparametric and has no likelihood family")
    return _FAMILIES[spec.kind](spec)


@dataclass(frozen=True)
class LsResult:
    alpha: float
    D: float
    n_lags: int
    fraction: float


def ls_fit(msd, dt, fraction=0.3):
    """
    Least-squares power-law fit of an MSD curve in log-log coordinates.

    Parameters
    ----------
    msd : MsdCurve
    dt : float
    fraction : float or None
        keep the lowest `!fraction` of the lags (at least 3); ``None`` or 1
        uses the curve as given.

    Returns
    -------
    LsResult
        ``alpha`` is the OLS slope of ``log MSD`` on ``log t`` and
        ``D = exp(ybar - alpha xbar) / 2``.
    """
    if fraction is not None and fraction < 1:
        msd = msd.truncate(fraction)
    t = msd.lags * dt
    y = np.asarray(msd.values, dtype=float)
    if y.size < 3:
        raise ValueError("LS fit needs at least 3 lags")
    if np.any(y <= 0):
        raise ValueError("MSD values must be positive for a log-log fit")
    x = np.log(t)
    y = np.log(y)
    xc = x - x.mean()
    alpha = np.dot(xc, y - y.mean()) / np.dot(xc, xc)
    D = 0.5 * np.exp(y.mean() - alpha * x.mean())
    return LsResult(float(alpha), float(D), int(y.size), float(1.0 if fraction is None else fraction))


def report_D(sigma_hat, alpha_hat=None, convention="per-alpha-units", msd_at_1s=1.0):
    """
    Diffusivity from a fitted scale matrix.

    ``per-alpha-units`` gives ``tr(Sigma)/(2k)``; ``msd-at-1s`` gives half the
    model MSD at one second, ``tr(Sigma)/(2k) * eta(1)``, where `!msd_at_1s`
    is ``eta(1 s | phi)`` of the driving kernel (1 for the fBM family).
    """
    sigma_hat = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    base = np.trace(sigma_hat) / (2.0 * sigma_hat.shape[0])
    if convention == "per-alpha-units":
        return float(base)
    if convention == "msd-at-1s":
        return float(base * msd_at_1s)
    raise ValueError(f"unknown convention {convention!r}")
