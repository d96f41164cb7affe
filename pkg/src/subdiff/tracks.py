"""
Trajectory containers, CSV I/O, drift subtraction and empirical MSDs.

Positions are in micrometers and times in seconds. A path with ``N + 1``
recorded positions has ``N`` increments.
"""
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Path",
    "TrajectorySet",
    "MsdCurve",
    "TrackFormatError",
    "load_csv",
    "write_csv",
    "drift_subtract",
    "empirical_msd",
    "ensemble_msd",
    "msd_ratio",
    "write_msd_csv",
    "read_msd_csv",
]

MSD_HEADER_COMMENT = "# subdiff-msd v1"


class TrackFormatError(ValueError):
    pass


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Path:
    id: str
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 2:
            raise ValueError(f"path {self.id!r} needs at least 2 positions")
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"path {self.id!r} has non-finite coordinates")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "id", str(self.id))

    @property
    def n_steps(self):
        return self.positions.shape[0] - 1

    @property
    def increments(self):
        return np.diff(self.positions, axis=0)


@dataclass(frozen=True)
class TrajectorySet:
    """
    Recorded particle paths on a common time grid.

    Parameters
    ----------
    dt : float
        seconds per frame.
    dim : int
        spatial dimension, 1 to 3.
    paths : tuple of Path
    """
    dt: float
    dim: int
    paths: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        paths = tuple(p if isinstance(p, Path) else Path(*p) for p in self.paths)
        ids = [p.id for p in paths]
        if len(set(ids)) != len(ids):
            raise ValueError("path ids must be unique")
        for p in paths:
            if p.positions.shape[1] != self.dim:
                raise ValueError(f"path {p.id!r} has {p.positions.shape[1]} columns, expected {self.dim}")
        object.__setattr__(self, "paths", paths)

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]

    @classmethod
    def from_arrays(cls, dt, arrays, ids=None):
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        arrays = [a[:, None] if a.ndim == 1 else a for a in arrays]
        if ids is None:
            width = len(str(max(len(arrays) - 1, 0)))
            ids = [f"p{i:0{width}d}" for i in range(len(arrays))]
        dim = arrays[0].shape[1] if arrays else 1
        return cls(dt, dim, tuple(Path(i, a) for i, a in zip(ids, arrays)))


@dataclass(frozen=True)
class MsdCurve:
    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags)
        values = np.asarray(self.values, dtype=float)
        if lags.shape != values.shape or lags.ndim != 1:
            raise ValueError("lags and values must be 1-d of equal length")
        if np.any(np.diff(lags) <= 0) or (lags.size and lags[0] < 1):
            raise ValueError("lags must be strictly increasing integers >= 1")
        if np.any(values < 0):
            raise ValueError("MSD values must be nonnegative")
        object.__setattr__(self, "lags", _frozen(lags).astype(int))
        object.__setattr__(self, "values", _frozen(values))

    def times(self, dt):
        return self.lags * dt

    def truncate(self, fraction=0.3):
        """Keep the lowest `!fraction` of lags (at least 3)."""
        m = max(3, int(np.floor(fraction * self.lags.size)))
        return MsdCurve(self.lags[:m], self.values[:m])


def load_csv(path, dt, dim):
    """
    Read a trajectory CSV with header ``id,frame,x[,y[,z]]``.

    Lines starting with ``#`` are ignored. Frames of each id must run
    0, 1, 2, ... without gaps or repeats; rows may be interleaved between ids.
    """
    coords = ["x", "y", "z"][:dim]
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TrackFormatError(f"{path}: empty file") from None
        if header != ["id", "frame"] + coords:
            raise TrackFormatError(f"{path}: header must be {','.join(['id', 'frame'] + coords)}, got {','.join(header)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise TrackFormatError(f"{path}: line {lineno} has {len(rec)} fields, expected {len(header)}")
            pid = rec[0].strip()
            try:
                frame = int(rec[1])
            except ValueError:
                raise TrackFormatError(f"{path}: id {pid!r} line {lineno}: frame {rec[1]!r} is not an integer") from None
            try:
                xyz = [float(v) for v in rec[2:]]
            except ValueError:
                raise TrackFormatError(f"{path}: id {pid!r} frame {frame}: non-numeric coordinate") from None
            if not all(np.isfinite(xyz)):
                raise TrackFormatError(f"{path}: id {pid!r} frame {frame}: non-finite coordinate")
            rows.setdefault(pid, {})
            if frame in rows[pid]:
                raise TrackFormatError(f"{path}: id {pid!r}: duplicate frame {frame}")
            rows[pid][frame] = xyz
    paths = []
    for pid, frames in rows.items():
        n = len(frames)
        for f in range(n):
            if f not in frames:
                raise TrackFormatError(f"{path}: id {pid!r}: gap at frame {f}")
        paths.append(Path(pid, np.array([frames[f] for f in range(n)])))
    return TrajectorySet(dt, dim, tuple(paths))


def write_csv(tracks, path):
    """Write `!tracks` in the trajectory CSV format; coordinates use ``%.17g``."""
    coords = ["x", "y", "z"][:tracks.dim]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["id", "frame"] + coords) + "\n")
        for p in tracks:
            for f, row in enumerate(p.positions):
                fh.write(f"{p.id},{f}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def drift_subtract(positions):
    """
    Remove the average velocity: ``X~_n = (X_n - X_0) - n mean(dX)``.

    The last row is set to zero exactly, since ``n mean(dX) = X_N - X_0``
    there and floating-point rounding would otherwise leave a residue.
    """
    x = np.asarray(positions, dtype=float)
    vector = x.ndim == 1
    x = x.reshape(len(x), -1)
    n = x.shape[0] - 1
    if n < 1:
        raise ValueError("need at least two positions")
    rel = x - x[0]
    vel = rel[-1] / n
    out = rel - np.arange(n + 1)[:, None] * vel
    out[-1] = 0.0
    return out[:, 0] if vector else out


def empirical_msd(positions, max_lag=None):
    """
    Time-averaged MSD over all overlapping windows, per coordinate.

    ``MSD(n) = 1/(k (N-n+1)) sum_{i=0}^{N-n} |X_{n+i} - X_i|^2``.

    Parameters
    ----------
    positions : (N+1, k) array_like
    max_lag : int, optional
        defaults to ``N``.

    Returns
    -------
    MsdCurve
    """
    x = np.asarray(positions, dtype=float)
    x = x.reshape(len(x), -1)
    n, k = x.shape[0] - 1, x.shape[1]
    if max_lag is None:
        max_lag = n
    if not 1 <= max_lag <= n:
        raise ValueError(f"max_lag must lie in 1..{n}")
    lags = np.arange(1, max_lag + 1)
    vals = np.empty(max_lag)
    for j, lag in enumerate(lags):
        d = x[lag:] - x[:-lag]
        vals[j] = np.sum(d * d) / (k * (n - lag + 1))
    return MsdCurve(lags, vals)


def ensemble_msd(tracks, max_lag, drift_correct=False):
    """
    Per-lag average of the path MSDs.

    Paths shorter than `!max_lag` contribute only to the lags they have; a
    warning is issued when that happens.
    """
    total = np.zeros(max_lag)
    count = np.zeros(max_lag)
    short = 0
    for p in sorted(tracks, key=lambda p: p.id):
        pos = drift_subtract(p.positions) if drift_correct else p.positions
        m = min(max_lag, p.n_steps)
        if m < max_lag:
            short += 1
        total[:m] += empirical_msd(pos, m).values
        count[:m] += 1
    if short:
        warnings.warn(f"{short} path(s) shorter than max_lag={max_lag}; their missing lags are excluded",
                      RuntimeWarning, stacklevel=2)
    keep = count > 0
    lags = np.arange(1, max_lag + 1)
    return MsdCurve(lags[keep], total[keep] / count[keep])


def msd_ratio(tracks, true_msd, clamp_lag):
    """
    Ratio of the drift-subtracted ensemble MSD to a reference curve.

    Returns ``g[n-1]`` for lags ``n = 1..len(true_msd)`` with ``g = 1`` for
    ``n > clamp_lag``.
    """
    max_lag = int(true_msd.lags[-1])
    if np.any(true_msd.lags != np.arange(1, max_lag + 1)):
        raise ValueError("true_msd must cover lags 1..L contiguously")
    if clamp_lag > max_lag:
        raise ValueError("clamp_lag exceeds the largest available lag")
    if np.any(true_msd.values == 0):
        raise ZeroDivisionError("true MSD is zero at some lag")
    emp = ensemble_msd(tracks, max_lag, drift_correct=True)
    if emp.lags.size != max_lag:
        raise ValueError("trajectories do not cover every requested lag")
    g = emp.values / true_msd.values
    g[clamp_lag:] = 1.0
    return g


def write_msd_csv(curve, dt, path):
    with open(path, "w", newline="") as fh:
        fh.write(MSD_HEADER_COMMENT + "\n")
        fh.write("lag,t_seconds,msd_um2\n")
        for lag, v in zip(curve.lags, curve.values):
            fh.write(f"{lag},{lag * dt:.17g},{v:.17g}\n")


def read_msd_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if line.strip() and not line.startswith("#")))
    if not rows or [h.strip() for h in rows[0]] != ["lag", "t_seconds", "msd_um2"]:
        raise TrackFormatError(f"{path}: header must be lag,t_seconds,msd_um2")
    try:
        body = np.array(rows[1:], dtype=float).reshape(-1, 3)
    except ValueError:
        raise TrackFormatError(f"{path}: malformed MSD row") from None
    return MsdCurve(body[:, 0].astype(int), body[:, 2])
