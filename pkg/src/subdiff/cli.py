"""
Command-line interface.

Subcommands: simulate, fit, msd, compare, coverage, gle-window. Every option
may also be given in a flat ``key = value`` config file (``--config``); keys
are the long option names with or without leading dashes, and command-line
flags override the file. Exit codes: 0 success, 1 runtime failure, 2 usage
error.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import json
import logging
import os
import sys

import numpy as np

from . import __version__

log = logging.getLogger("subdiff")

FIT_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


# --- config ---------------------------------------------------------------------

def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            out[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return out


def _apply_config(parser, sub, cfg):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cfg.items():
        if key == "config":
            continue
        act = actions.get(key)
        if act is None or key == "help":
            raise UsageError(f"unknown config key {key!r} for this command")
        try:
            if act.nargs in ("+", "*"):
                items = raw.replace(",", " ").split()
                val = [act.type(v) if act.type else v for v in items]
            elif isinstance(act, argparse._StoreTrueAction):
                val = raw.lower() in ("1", "true", "yes", "on")
            else:
                val = act.type(raw) if act.type else raw
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
        if act.choices is not None:
            vals = val if isinstance(val, list) else [val]
            bad = [v for v in vals if v not in act.choices]
            if bad:
                raise UsageError(f"config key {key!r}: invalid choice {bad[0]!r}")
        defaults[key] = val
    sub.set_defaults(**defaults)


def resolve_threads(value):
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("SUBDIFF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SUBDIFF_THREADS must be an integer, got {env!r}") from None
    return 1


# --- shared builders ------------------------------------------------------------

def _noise_from_args(args):
    from .noise import ArmaFilter, SavinDoyleNoise
    kind = args.noise
    if kind == "none":
        return None
    if kind == "fma":
        if len(args.rho) != 1:
            raise UsageError("--noise fma takes exactly one --rho")
        return ArmaFilter(rho=args.rho).validate()
    if kind == "fma2":
        if len(args.rho) != 2:
            raise UsageError("--noise fma2 takes two --rho values")
        return ArmaFilter(rho=args.rho).validate()
    if kind == "arma":
        return ArmaFilter(theta=args.theta, rho=args.rho).validate()
    if kind == "sd":
        return SavinDoyleNoise(args.tau, args.static_sigma)
    raise UsageError(f"unknown noise {kind!r}")


def _gle_from_args(args):
    from .gle import GleSpec
    return GleSpec(args.K, args.rouse_gamma, args.rouse_tau, args.nu, args.kT)


def _sim_params(args):
    from .experiments import load_g_table
    params = {}
    if args.sigma is not None:
        params["sigma"] = args.sigma * np.eye(args.dim)
    else:
        params["D"] = args.D
    if args.mu is not None:
        if len(args.mu) != args.dim:
            raise UsageError(f"--mu needs {args.dim} values")
        params["mu"] = np.array(args.mu)
    if args.model == "fbm":
        params["alpha"] = args.alpha
        params["noise"] = _noise_from_args(args)
        return "fbm+filter", params
    if args.model == "empirical":
        if args.g_table is None:
            raise UsageError("--model empirical needs --g-table")
        params.update(alpha=args.alpha, gamma=args.gamma,
                      g=load_g_table(args.g_table, args.N0), N0=args.N0)
        return "empirical", params
    params["gle"] = _gle_from_args(args)
    return "gle", params


def _add_sim_options(p):
    p.add_argument("--alpha", type=float, default=0.8, help="fBM exponent")
    p.add_argument("--D", type=float, default=0.5, help="diffusivity; Sigma = 2 D I")
    p.add_argument("--sigma", type=float, default=None, help="isotropic Sigma (overrides --D)")
    p.add_argument("--mu", type=float, nargs="+", default=None, help="drift velocity per coordinate")
    p.add_argument("--noise", choices=["none", "fma", "fma2", "arma", "sd"], default="none")
    p.add_argument("--rho", type=float, nargs="+", default=[], help="MA coefficients rho_1..rho_q")
    p.add_argument("--theta", type=float, nargs="+", default=[], help="AR coefficients theta_1..theta_p")
    p.add_argument("--tau", type=float, default=0.0, help="Savin-Doyle exposure time (s)")
    p.add_argument("--static-sigma", type=float, default=0.0, help="Savin-Doyle static noise scale")
    p.add_argument("--g-table", default=None, help="CSV lag,g of the empirical MSD ratio")
    p.add_argument("--gamma", type=float, default=1.0, help="empirical noise factor")
    p.add_argument("--N0", type=int, default=None, help="lag beyond which g = 1")
    p.add_argument("--K", type=int, default=300)
    p.add_argument("--rouse-gamma", type=float, default=1.67)
    p.add_argument("--rouse-tau", type=float, default=0.01)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--kT", type=float, default=1.0)
    p.add_argument("--n", type=int, default=900, help="increments per path")
    p.add_argument("--dt", type=float, default=1 / 60)
    p.add_argument("--dim", type=int, default=2, choices=[1, 2, 3])
    p.add_argument("--seed", type=int, default=0)


def _model_specs(names, args):
    from .models import ModelSpec
    specs = []
    for name in names:
        spec = ModelSpec.from_string(name)
        opts = dict(spec.options)
        if spec.kind == "fsd" and args.fix_tau is not None:
            opts["fix_tau"] = args.fix_tau
        if spec.kind == "ls" and "fraction" not in opts:
            opts["fraction"] = args.ls_fraction
        drift = spec.drift if ":" in name and "drift=" in name else args.drift
        specs.append(ModelSpec(spec.kind, drift, tuple(opts.items())))
    return specs


def _dump_json(obj, path):
    from .experiments import _jsonable
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _load_tracks(args):
    from .tracks import load_csv
    if args.input is None:
        raise UsageError("an input trajectory CSV is required")
    if not os.path.exists(args.input):
        raise UsageError(f"input file {args.input} does not exist")
    return load_csv(args.input, args.dt, args.dim)


# --- commands --------------------------------------------------------------------

def cmd_simulate(args):
    from .experiments import simulate_experiment, _describe_params
    from .tracks import write_csv
    kind, params = _sim_params(args)
    tracks = simulate_experiment(kind, params, args.paths, args.n, args.dt, args.dim, args.seed)
    write_csv(tracks, args.output)
    sidecar = {"kind": kind, "params": _describe_params(params), "n": args.n, "paths": args.paths,
               "dt": args.dt, "dim": args.dim, "seed": args.seed, "version": __version__}
    _dump_json(sidecar, args.output + ".json")
    return 0


def _fit_one(job):
    from .likelihood import fit_mle
    from .models import ls_fit
    from .tracks import drift_subtract, empirical_msd
    pid, positions, dt, spec, seed = job
    rec = {"id": pid, "model": spec.kind}
    try:
        if spec.kind == "ls":
            frac = spec.option("fraction", 0.3)
            res = ls_fit(empirical_msd(drift_subtract(positions)), dt, frac)
            rec.update(alpha=res.alpha, D=res.D, se_alpha=None, se_logD=None,
                       ci_alpha=[None, None], ci_logD=[None, None], loglik=None,
                       params={"fraction": res.fraction, "n_lags": res.n_lags},
                       convergence={"converged": True, "boundary": False, "n_evals": 0,
                                    "n_restarts": 0, "message": "closed form"},
                       status="ok")
        else:
            fit = fit_mle(spec, positions, dt, seed=seed)
            d = fit.to_dict()
            d.pop("model")
            d["params"]["options"] = dict(spec.options)
            d["params"]["drift"] = spec.drift
            rec.update(d, status="ok")
    except Exception as exc:
        rec.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
    return rec


def _run_jobs(fn, jobs, threads):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_fit(args):
    from .toeplitz import substream
    tracks = _load_tracks(args)
    specs = _model_specs(args.model, args)
    jobs = []
    for p in sorted(tracks, key=lambda p: p.id):
        for spec in specs:
            s = int(substream(args.seed, "fit", p.id, spec.kind).integers(2**31))
            jobs.append((p.id, np.array(p.positions), args.dt, spec, s))
    records = _run_jobs(_fit_one, jobs, resolve_threads(args.threads))
    doc = {"schema_version": FIT_SCHEMA_VERSION, "version": __version__, "dt": args.dt,
           "dim": args.dim, "input": os.path.basename(args.input),
           "models": [s.to_dict() for s in specs], "records": records}
    _dump_json(doc, args.output)
    n_ok = sum(r["status"] == "ok" for r in records)
    for r in records:
        if r["status"] != "ok":
            log.warning("path %s model %s failed: %s", r["id"], r["model"], r["reason"])
    return 0 if n_ok else 1


def cmd_msd(args):
    from .tracks import ensemble_msd, write_msd_csv
    tracks = _load_tracks(args)
    max_lag = args.max_lag or max(p.n_steps for p in tracks)
    curve = ensemble_msd(tracks, max_lag, drift_correct=args.drift_correct)
    if args.output in (None, "-"):
        import io
        buf = io.StringIO()
        _write_msd(curve, args.dt, buf)
        sys.stdout.write(buf.getvalue())
    else:
        write_msd_csv(curve, args.dt, args.output)
    return 0


def _write_msd(curve, dt, fh):
    from .tracks import MSD_HEADER_COMMENT
    fh.write(MSD_HEADER_COMMENT + "\n")
    fh.write("lag,t_seconds,msd_um2\n")
    for lag, v in zip(curve.lags, curve.values):
        fh.write(f"{lag},{lag * dt:.17g},{v:.17g}\n")


def cmd_compare(args):
    from .experiments import compare_composite, composite_loglik
    from .likelihood import fit_mle
    from .toeplitz import substream
    tracks = _load_tracks(args)
    names = list(dict.fromkeys(["fbm"] + list(args.model)))
    specs = _model_specs(names, args)
    if any(s.kind == "ls" for s in specs):
        raise UsageError("compare needs likelihood models; ls has no fitted drift or Sigma")
    fits = {}
    for spec in specs:
        fits[spec.kind] = []
        for p in tracks:
            s = int(substream(args.seed, "fit", p.id, spec.kind).integers(2**31))
            fits[spec.kind].append(fit_mle(spec, p.positions, args.dt, seed=s))
    table = compare_composite(tracks, fits, args.r)
    per_path = []
    for i, p in enumerate(tracks):
        for spec in specs:
            f = fits[spec.kind][i]
            per_path.append({"id": p.id, "model": spec.kind, "loglik": f.loglik,
                             "alpha": f.alpha, "D": f.D,
                             "composite": {str(r): composite_loglik(p.positions, args.dt, f.alpha, f.beta,
                                                                    f.sigma, r, f.spec.drift)
                                           for r in args.r}})
    per_path.sort(key=lambda d: (d["id"], d["model"]))
    doc = {"version": __version__, "reference": "fbm", "r": list(args.r),
           "S": {m: {str(r): v for r, v in row.items()} for m, row in table.items()},
           "paths": per_path}
    _dump_json(doc, args.output)
    return 0


def cmd_gle_window(args):
    from dataclasses import asdict
    from .gle import extract_window, gle_msd, window_grid
    spec = _gle_from_args(args)
    t = window_grid(spec, args.grid_n)
    msd = gle_msd(spec, t)
    win = extract_window(t, msd, args.kappa)
    doc = {"spec": asdict(spec), "grid_n": args.grid_n, "window": asdict(win),
           "msd_at_1s": float(gle_msd(spec, np.array([1.0]))[0])}
    if args.msd_out:
        with open(args.msd_out, "w") as fh:
            fh.write("t_seconds,msd_um2\n")
            for ti, mi in zip(t, msd):
                fh.write(f"{ti:.17g},{mi:.17g}\n")
    _dump_json(doc, args.output)
    return 0


def cmd_coverage(args):
    from .experiments import coverage_study
    kind, params = _sim_params(args)
    truth = {"kind": kind, "params": params, "N": args.n, "dt": args.dt, "k": args.dim}
    if args.alpha_true is not None:
        truth["alpha"] = args.alpha_true
    elif kind == "gle":
        raise UsageError("coverage with a GLE truth needs --alpha-true and --D-true")
    if args.D_true is not None:
        truth["D"] = args.D_true
    specs = _model_specs(args.fit_models, args)
    report = coverage_study(truth, specs, args.B, seed=args.seed, workers=resolve_threads(args.threads))
    if args.csv:
        report.write_csv(args.csv)
    _dump_json(report.to_dict(), args.output)
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="subdiff", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key = value config file")

    p = subs.add_parser("simulate", help="simulate trajectories to a CSV")
    common(p)
    p.add_argument("--model", choices=["fbm", "empirical", "gle"], default="fbm")
    _add_sim_options(p)
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("-o", "--output", required=True, help="trajectory CSV; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_simulate)

    def fit_opts(p, default_models):
        p.add_argument("input", nargs="?", default=None, help="trajectory CSV (id,frame,x[,y[,z]])")
        p.add_argument("--dt", type=float, required=True, help="seconds per frame")
        p.add_argument("--dim", type=int, default=2, choices=[1, 2, 3])
        p.add_argument("--model", nargs="+", default=default_models,
                       help="model kinds, optionally kind:key=value,...")
        p.add_argument("--drift", choices=["none", "linear", "quadratic"], default="linear")
        p.add_argument("--fix-tau", type=float, default=None, help="fixed fSD exposure time (s)")
        p.add_argument("--ls-fraction", type=float, default=0.3)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("-o", "--output", default="-")

    p = subs.add_parser("fit", help="fit models to each path")
    common(p)
    fit_opts(p, ["fma"])
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("msd", help="ensemble empirical MSD")
    common(p)
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--dim", type=int, default=2, choices=[1, 2, 3])
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("--drift-correct", action="store_true")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_msd)

    p = subs.add_parser("compare", help="composite-likelihood comparison against fbm")
    common(p)
    fit_opts(p, ["fma"])
    p.add_argument("--r", type=int, nargs="+", default=[1, 5, 10, 20, 60])
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("coverage", help="Monte Carlo coverage study")
    common(p)
    p.add_argument("--truth", dest="model", choices=["fbm", "empirical", "gle"], default="fbm")
    _add_sim_options(p)
    p.add_argument("--models", dest="fit_models", nargs="+", default=["fma", "fbm"])
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--alpha-true", type=float, default=None)
    p.add_argument("--D-true", type=float, default=None)
    p.add_argument("--drift", choices=["none", "linear", "quadratic"], default="linear")
    p.add_argument("--fix-tau", type=float, default=None)
    p.add_argument("--ls-fraction", type=float, default=0.3)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--csv", default=None, help="also write model,metric,value CSV")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_coverage)

    p = subs.add_parser("gle-window", help="transient subdiffusion window of a Rouse GLE")
    common(p)
    p.add_argument("--K", type=int, default=300)
    p.add_argument("--rouse-gamma", type=float, default=1.67)
    p.add_argument("--rouse-tau", type=float, default=0.01)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--kT", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=0.01)
    p.add_argument("--grid-n", type=int, default=512)
    p.add_argument("--msd-out", default=None, help="write the MSD grid as CSV")
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_gle_window)
    return parser


def _check_outputs(args):
    for attr in ("output", "csv", "msd_out"):
        path = getattr(args, attr, None)
        if path in (None, "-"):
            continue
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            raise UsageError(f"output directory {parent} does not exist")


def _prescan(parser, argv):
    # subcommand and --config value, found before full parsing so that
    # config values can satisfy required options
    names = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in names), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return (names[command] if command else None), config


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        sub, config = _prescan(parser, argv)
        if sub is not None and config:
            cfg = read_config(config)
            _apply_config(parser, sub, cfg)
            for act in sub._actions:
                if act.dest in cfg:
                    act.required = False
        args = parser.parse_args(argv)
        _check_outputs(args)
    except UsageError as exc:
        print(f"subdiff: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"subdiff: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"subdiff: failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"subdiff: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
