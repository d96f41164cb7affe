import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subdiff.tracks import (
    MsdCurve,
    TrackFormatError,
    TrajectorySet,
    drift_subtract,
    empirical_msd,
    ensemble_msd,
    load_csv,
    msd_ratio,
    read_msd_csv,
    write_csv,
    write_msd_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def brute_msd(x, lag):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    n, k = x.shape[0] - 1, x.shape[1]
    s = 0.0
    for i in range(n - lag + 1):
        s += np.sum((x[i + lag] - x[i]) ** 2)
    return s / (k * (n - lag + 1))


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- CSV -------------------------------------------------------------------

def test_csv_roundtrip_exact(tmp_path, rng):
    ts = TrajectorySet.from_arrays(0.1, [rng.normal(size=(7, 2)), rng.normal(size=(4, 2)) * 1e-7])
    write_csv(ts, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv", 0.1, 2)
    assert [p.id for p in back] == ["p0", "p1"]
    for a, b in zip(ts, back):
        np.testing.assert_array_equal(a.positions, b.positions)


def test_csv_interleaved_and_comments(tmp_path):
    p = write(tmp_path, "# note\nid,frame,x\nb,1,2.0\na,0,1\nb,0,1.5\n# mid\na,1,3\n")
    ts = load_csv(p, 1.0, 1)
    pos = {q.id: q.positions[:, 0].tolist() for q in ts}
    assert pos == {"b": [1.5, 2.0], "a": [1.0, 3.0]}


@pytest.mark.parametrize("body, msg", [
    ("id,frame,x\na,0,1\na,2,3\n", "gap at frame 1"),
    ("id,frame,x\na,0,1\na,0,2\n", "duplicate frame"),
    ("id,frame,x\na,0,abc\n", "non-numeric coordinate"),
    ("id,frame,x\na,0,nan\n", "non-finite"),
    ("id,frame,y\na,0,1\n", "header"),
    ("id,frame,x\na,0\n", "fields"),
])
def test_csv_errors(tmp_path, body, msg):
    with pytest.raises(TrackFormatError, match=msg):
        load_csv(write(tmp_path, body), 1.0, 1)


def test_msd_csv_roundtrip(tmp_path):
    c = MsdCurve(np.arange(1, 5), np.array([0.1, 0.2, 0.25, 1 / 3]))
    write_msd_csv(c, 0.5, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().startswith("# subdiff-msd v1\nlag,t_seconds,msd_um2\n")
    back = read_msd_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.lags, c.lags)
    np.testing.assert_array_equal(back.values, c.values)


# --- drift subtraction ------------------------------------------------------

def test_drift_subtract_endpoint_exact(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        x = np.cumsum(rng.normal(scale=10 ** rng.uniform(-6, 6), size=(n, 2)), axis=0) + rng.normal(size=2) * 1e4
        out = drift_subtract(x)
        assert np.all(out[-1] == 0.0) and np.all(out[0] == 0.0)


def test_drift_subtract_formula(rng):
    x = rng.normal(size=(9, 3))
    n = np.arange(9)[:, None]
    exp = (x - x[0]) - n * np.mean(np.diff(x, axis=0), axis=0)
    np.testing.assert_allclose(drift_subtract(x)[:-1], exp[:-1], atol=1e-13)
    np.testing.assert_allclose(drift_subtract(x[:, 0]), drift_subtract(x[:, :1])[:, 0])


@settings(max_examples=50, deadline=None)
@given(x=arrays(float, (12, 2), elements=finite), v=arrays(float, 2, elements=finite))
def test_drift_subtract_removes_linear_trend(x, v):
    shifted = x + np.arange(12)[:, None] * v
    np.testing.assert_allclose(drift_subtract(shifted), drift_subtract(x), atol=1e-7 * (1 + np.abs(x).max() + np.abs(v).max()))


# --- MSD -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(x=arrays(float, st.tuples(st.integers(2, 15), st.integers(1, 3)), elements=finite))
def test_empirical_msd_matches_double_loop(x):
    c = empirical_msd(x)
    exp = [brute_msd(x, lag) for lag in range(1, len(x))]
    np.testing.assert_allclose(c.values, exp, rtol=1e-12, atol=1e-12 * (1 + np.max(x ** 2)))


def test_msd_invariances(rng):
    x = rng.normal(size=(30, 2))
    base = empirical_msd(x, 10).values
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    np.testing.assert_allclose(empirical_msd(x + [5.0, -3.0], 10).values, base, rtol=1e-12)
    np.testing.assert_allclose(empirical_msd(x @ q.T, 10).values, base, rtol=1e-12)
    np.testing.assert_allclose(empirical_msd(3 * x, 10).values, 9 * base, rtol=1e-12)


def test_constant_path_zero_msd():
    assert np.all(empirical_msd(np.ones((5, 2))).values == 0)


def test_ensemble_msd_short_paths_warn(rng):
    ts = TrajectorySet.from_arrays(1.0, [rng.normal(size=(11, 1)), rng.normal(size=(4, 1))])
    with pytest.warns(RuntimeWarning, match="shorter"):
        c = ensemble_msd(ts, 5)
    a = empirical_msd(ts[0].positions, 5).values
    b = empirical_msd(ts[1].positions, 3).values
    np.testing.assert_allclose(c.values, np.r_[(a[:3] + b) / 2, a[3:]])


def test_ensemble_msd_no_warning_when_covered(rng):
    ts = TrajectorySet.from_arrays(1.0, [rng.normal(size=(11, 2)) for _ in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ensemble_msd(ts, 10)


def test_msd_ratio_clamps(rng):
    ts = TrajectorySet.from_arrays(1.0, [np.cumsum(rng.normal(size=(50, 1)), axis=0) for _ in range(5)])
    true = MsdCurve(np.arange(1, 11), np.arange(1, 11, dtype=float))
    g = msd_ratio(ts, true, clamp_lag=4)
    emp = ensemble_msd(ts, 10, drift_correct=True).values
    np.testing.assert_allclose(g[:4], emp[:4] / np.arange(1, 5))
    assert np.all(g[4:] == 1.0)
    with pytest.raises(ValueError):
        msd_ratio(ts, true, clamp_lag=11)


def test_msd_curve_validation():
    with pytest.raises(ValueError):
        MsdCurve([0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        MsdCurve([1, 2], [1.0, -2.0])
    assert MsdCurve(np.arange(1, 21), np.ones(20)).truncate(0.3).lags.tolist() == [1, 2, 3, 4, 5, 6]
    assert MsdCurve(np.arange(1, 6), np.ones(5)).truncate(0.3).lags.size == 3
