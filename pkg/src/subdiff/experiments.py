"""
Simulation harnesses: synthetic experiments, coverage studies, and the
downsampled composite-likelihood model comparison.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import json
import logging
import warnings

import numpy as np

from .csi import CsiKernel, fbm_acf, msd_to_acf
from .gle import GleSpec
from .likelihood import MatNormModel, fit_mle, matnorm_loglik
from .models import ModelSpec, drift_increments, ls_fit
from .noise import (ArmaFilter, SavinDoyleNoise, arma_filtered_acf, filtered_drift,
                    required_base_length)
from .toeplitz import simulate_stationary, substream
from .tracks import TrajectorySet, drift_subtract, empirical_msd

__all__ = [
    "SIM_KINDS",
    "scale_matrix",
    "increment_acf",
    "simulate_experiment",
    "CoverageRow",
    "CoverageReport",
    "coverage_study",
    "downsample_phases",
    "composite_loglik",
    "compare_composite",
    "load_g_table",
]

log = logging.getLogger(__name__)

SIM_KINDS = ("fbm+filter", "empirical", "gle")


def scale_matrix(params, k):
    """``Sigma`` from ``params['sigma']`` (k x k) or ``params['D']`` (``Sigma = 2 D I``)."""
    if params.get("sigma") is not None:
        s = np.atleast_2d(np.asarray(params["sigma"], dtype=float))
        if s.shape == (1, 1):
            s = s[0, 0] * np.eye(k)
        if s.shape != (k, k):
            raise ValueError(f"sigma must be {k} x {k}")
        return s
    return 2.0 * float(params.get("D", 0.5)) * np.eye(k)


def _empirical_msd_y(params, dt, n):
    alpha = params["alpha"]
    g = np.asarray(params["g"], dtype=float)
    gamma = float(params.get("gamma", 1.0))
    n0 = int(params.get("N0", g.size))
    lags = np.arange(n + 1)
    msd_x = (lags * dt) ** alpha
    ratio = np.ones(n + 1)
    m = min(g.size, n, n0)
    ratio[1:m + 1] = g[:m]
    return (gamma * ratio - gamma + 1.0) * msd_x


def increment_acf(kind, params, dt, n):
    """
    Unit-scale increment autocovariance (``Sigma = I``) of a simulation kind.

    Parameters
    ----------
    kind : {'fbm+filter', 'empirical', 'gle'}
    params : dict
        fbm+filter: ``alpha`` and optional ``noise`` (`ArmaFilter` or
        `SavinDoyleNoise`). empirical: ``alpha``, ``g`` (ratio at lags 1..L),
        ``gamma`` and ``N0``. gle: ``gle`` (`GleSpec`).
    """
    if kind == "fbm+filter":
        noise = params.get("noise")
        alpha = params["alpha"]
        if noise is None or (isinstance(noise, ArmaFilter) and noise.is_identity):
            return fbm_acf(alpha, dt, n)
        if isinstance(noise, SavinDoyleNoise):
            return noise.acf(alpha, dt, n)
        base = fbm_acf(alpha, dt, required_base_length(noise, n))
        return arma_filtered_acf(noise, base, n)
    if kind == "empirical":
        return msd_to_acf(_empirical_msd_y(params, dt, n))
    if kind == "gle":
        return CsiKernel("gle", gle=params["gle"]).acf(dt, n)
    raise ValueError(f"unknown simulation kind {kind!r}; choose from {', '.join(SIM_KINDS)}")


def simulate_experiment(kind, params, B, N, dt, k=2, seed=0):
    """
    Simulate `!B` trajectories of `!N` increments.

    Increments are exact Gaussian draws with row covariance from
    `increment_acf` and column scale ``Sigma`` (`scale_matrix`). An optional
    drift velocity ``params['mu']`` (length k, per second) is added as a
    linear drift, passed through the noise filter when there is one.
    Path ``i`` depends only on ``(seed, i)``.

    Returns
    -------
    TrajectorySet
        positions start at the origin.
    """
    acf = increment_acf(kind, params, dt, N)
    sigma = scale_matrix(params, k)
    chol = np.linalg.cholesky(sigma)
    raw = simulate_stationary(acf, B, cols=k, seed=seed)
    mu = params.get("mu")
    drift = 0.0
    if mu is not None:
        F = drift_increments("linear", dt, N)
        noise = params.get("noise")
        if isinstance(noise, ArmaFilter):
            F = filtered_drift(noise, F)
        drift = F @ np.atleast_2d(np.asarray(mu, dtype=float)).reshape(1, k)
    arrays = []
    for dx in raw:
        inc = dx @ chol.T + drift
        arrays.append(np.vstack([np.zeros((1, k)), np.cumsum(inc, axis=0)]))
    return TrajectorySet.from_arrays(dt, arrays)


# --- coverage -------------------------------------------------------------------

@dataclass
class CoverageRow:
    model: str
    mean_alpha: float
    mean_logD: float
    sd_alpha: float
    sd_logD: float
    P95_alpha: float
    P95_logD: float
    B: int
    failures: int
    n_covered_denominator: int


@dataclass
class CoverageReport:
    """
    Coverage summary per model.

    ``P95_*`` is the fraction of replicates with a finite standard error whose
    ``estimate +/- 1.96 se`` interval covers the truth; replicates whose fit
    raised or produced no standard error are counted in ``failures``.
    """
    truth: dict
    rows: list = field(default_factory=list)

    def row(self, model):
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    def to_dict(self):
        return {"truth": self.truth, "rows": [asdict(r) for r in self.rows]}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "metric", "value"])
            for r in self.rows:
                for key, val in asdict(r).items():
                    if key == "model":
                        continue
                    w.writerow([r.model, key, _fmt(val)])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _fit_replicate(job):
    b, positions, dt, specs, seed = job
    out = []
    for spec in specs:
        try:
            if spec.kind == "ls":
                frac = spec.option("fraction", 0.3)
                curve = empirical_msd(drift_subtract(positions))
                res = ls_fit(curve, dt, frac)
                out.append((res.alpha, np.log(res.D), np.nan, np.nan, ""))
            else:
                fit = fit_mle(spec, positions, dt, seed=int(substream(seed, "fit", b).integers(2**31)))
                out.append((fit.alpha, np.log(fit.D), fit.se_alpha, fit.se_logD, ""))
        except Exception as exc:  # recorded as a failure
            out.append((np.nan, np.nan, np.nan, np.nan, f"{type(exc).__name__}: {exc}"))
    return b, out


def coverage_study(truth, models, B, seed=0, workers=1):
    """
    Monte Carlo coverage of the 95% intervals for ``alpha`` and ``log D``.

    Parameters
    ----------
    truth : dict
        ``kind``, ``params``, ``N``, ``dt``, ``k`` for `simulate_experiment`,
        plus the true ``alpha`` and ``D`` (``D`` defaults to ``tr(Sigma)/(2k)``).
    models : list of ModelSpec
    B : int
    seed : int
    workers : int
        process pool size; results do not depend on it.

    Returns
    -------
    CoverageReport
    """
    kind, params = truth["kind"], dict(truth.get("params", {}))
    N, dt, k = int(truth["N"]), float(truth["dt"]), int(truth.get("k", 2))
    alpha_true = float(truth.get("alpha", params.get("alpha")))
    D_true = float(truth.get("D", np.trace(scale_matrix(params, k)) / (2 * k)))
    tracks = simulate_experiment(kind, params, B, N, dt, k, seed)
    jobs = [(b, np.array(p.positions), dt, list(models), seed) for b, p in enumerate(tracks)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_replicate, jobs, chunksize=max(1, B // (4 * workers))))
    else:
        results = [_fit_replicate(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    est = np.array([[r[:4] for r in out] for _, out in results], dtype=float).reshape(B, len(models), 4)
    report = CoverageReport(truth={"kind": kind, "N": N, "dt": dt, "k": k, "B": B, "seed": seed,
                                   "alpha": alpha_true, "D": D_true,
                                   "params": _describe_params(params)})
    for j, spec in enumerate(models):
        a, ld, sa, sd = est[:, j].T
        ok = np.isfinite(a)
        with_se = ok & np.isfinite(sa) & np.isfinite(sd)
        parametric = spec.kind != "ls"
        failures = int(np.sum(~with_se)) if parametric else int(np.sum(~ok))
        if parametric and np.any(with_se):
            cov_a = np.abs(a[with_se] - alpha_true) <= 1.959963984540054 * sa[with_se]
            cov_d = np.abs(ld[with_se] - np.log(D_true)) <= 1.959963984540054 * sd[with_se]
            p95a, p95d = float(np.mean(cov_a)), float(np.mean(cov_d))
        else:
            p95a = p95d = np.nan
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report.rows.append(CoverageRow(
                model=spec.kind, mean_alpha=float(np.nanmean(a)) if np.any(ok) else np.nan,
                mean_logD=float(np.nanmean(ld)) if np.any(ok) else np.nan,
                sd_alpha=float(np.nanstd(a, ddof=1)) if np.sum(ok) > 1 else np.nan,
                sd_logD=float(np.nanstd(ld, ddof=1)) if np.sum(ok) > 1 else np.nan,
                P95_alpha=p95a, P95_logD=p95d, B=B, failures=failures,
                n_covered_denominator=int(np.sum(with_se)) if parametric else 0))
        for b, out in results:
            if out[j][4]:
                log.info("replicate %d model %s failed: %s", b, spec.kind, out[j][4])
    return report


def _describe_params(params):
    out = {}
    for key, val in params.items():
        if isinstance(val, ArmaFilter):
            out[key] = {"type": "arma", "theta": list(val.theta), "rho": list(val.rho)}
        elif isinstance(val, SavinDoyleNoise):
            out[key] = {"type": "savin-doyle", "exposure_time": val.exposure_time,
                        "static_scale": val.static_scale}
        elif isinstance(val, GleSpec):
            out[key] = asdict(val)
        elif isinstance(val, np.ndarray):
            out[key] = val.tolist()
        else:
            out[key] = val
    return out


# --- composite likelihood ------------------------------------------------------

def downsample_phases(n_positions, r):
    """
    Index arrays ``k, k+r, k+2r, ...`` (``k = 0..r-1``) into ``0..N``.

    The phases partition the index set. Requires ``r < N/4`` where ``N`` is
    the number of increments.
    """
    n = n_positions - 1
    if r < 1 or int(r) != r:
        raise ValueError("r must be a positive integer")
    if r >= n / 4:
        raise ValueError(f"r={r} leaves too few points per phase for N={n}")
    phases = [np.arange(k, n + 1, r) for k in range(r)]
    used = np.concatenate(phases)
    assert used.size == n + 1 and np.array_equal(np.sort(used), np.arange(n + 1))
    return phases


def _drift_columns(drift, idx, dt, r):
    # matches drift_increments exactly when r = 1
    n = idx.size - 1
    if drift == "none":
        return np.zeros((n, 0))
    cols = [np.full(n, r * dt)]
    if drift == "quadratic":
        cols.append(np.diff((idx * dt) ** 2))
    return np.column_stack(cols)


def composite_loglik(positions, dt, alpha, beta, sigma, r, drift="linear"):
    """
    Sum of fBM log-likelihoods over the `!r` downsampled phases.

    Phase ``k`` is observed every ``r dt`` starting at ``k dt``; its drift
    matrix is built from the actual observation times.
    """
    pos = np.asarray(positions, dtype=float)
    pos = pos.reshape(len(pos), -1)
    k = pos.shape[1]
    beta = np.asarray(beta, dtype=float).reshape(-1, k)
    total = 0.0
    for idx in downsample_phases(pos.shape[0], r) if r > 1 else [np.arange(pos.shape[0])]:
        y = np.diff(pos[idx], axis=0)
        F = _drift_columns(drift, idx, dt, r)
        model = MatNormModel(F, fbm_acf(alpha, r * dt, y.shape[0]), y)
        total += matnorm_loglik(model, beta, sigma)
    return total


def compare_composite(tracks, fits, r_list, reference="fbm"):
    """
    Average composite-likelihood improvement over the reference model.

    Parameters
    ----------
    tracks : TrajectorySet
    fits : dict
        model name -> list of `FitResult`, one per path in `!tracks` order.
    r_list : sequence of int
    reference : str

    Returns
    -------
    dict
        ``{model: {r: S^r}}``; the reference row is identically zero.
    """
    if reference not in fits:
        raise KeyError(f"fits must include the reference model {reference!r}")
    table = {}
    cache = {}
    for model in sorted(fits):
        table[model] = {}
        for r in r_list:
            diffs = []
            for i, path in enumerate(tracks):
                vals = []
                for name in (model, reference):
                    key = (name, i, r)
                    if key not in cache:
                        f = fits[name][i]
                        cache[key] = composite_loglik(path.positions, tracks.dt, f.alpha, f.beta,
                                                      f.sigma, r, f.spec.drift)
                    vals.append(cache[key])
                diffs.append(vals[0] - vals[1])
            table[model][int(r)] = float(np.mean(diffs))
    return table


def load_g_table(path, N0=None):
    """
    Read an MSD-ratio table (CSV ``lag,g``, lags 1..L contiguous).

    Values beyond lag `!N0` are replaced by 1.
    """
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1, ndmin=2)
    lags = data[:, 0].astype(int)
    if not np.array_equal(lags, np.arange(1, lags.size + 1)):
        raise ValueError(f"{path}: lags must run 1..L without gaps")
    g = data[:, 1].copy()
    if N0 is not None:
        g[int(N0):] = 1.0
    return g
