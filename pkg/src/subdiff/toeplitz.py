"""
Symmetric positive-definite Toeplitz linear algebra.

The covariance of ``N`` consecutive increments of a stationary process is the
Toeplitz matrix built from its autocovariance ``acf[0..N-1]``. Everything here
works from that first row alone:

+ `dl_solve` solves ``V x = b`` and returns ``log|V|`` with the Levinson
  recursion, O(N^2) time and O(N) extra memory.
+ `dl_whiten` runs the Durbin-Levinson innovations recursion and returns the
  one-step prediction errors of each column together with their variances.
  Quadratic forms ``a' V^{-1} b`` are then sums of products of prediction
  errors, which is all a Gaussian likelihood needs.
+ `simulate_stationary` inverts the whitening to draw exact Gaussian samples.
+ `toeplitz_matvec` multiplies a general (rectangular, non-symmetric) Toeplitz
  matrix by a vector via circulant embedding and the FFT.

Positive definiteness is never checked up front; the recursions fail at the
first nonpositive innovation variance and report its order.
"""
import numpy as np
from numba import njit

__all__ = [
    "NotPositiveDefiniteError",
    "dl_solve",
    "dl_whiten",
    "simulate_stationary",
    "toeplitz_matvec",
    "dense_toeplitz",
    "substream",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """The autocovariance does not define a positive-definite Toeplitz matrix.

    Attributes
    ----------
    order : int
        the first recursion order whose innovation variance was not positive.
    """
    def __init__(self, order, variance=np.nan):
        self.order = int(order)
        self.variance = float(variance)
        super().__init__(
            f"Toeplitz matrix is not positive definite: innovation variance "
            f"{self.variance:.3g} at order {self.order}"
        )


@njit(cache=True)
def _levinson(acf, rhs):
    n, m = rhs.shape
    x = np.zeros((n, m))
    phi = np.zeros(n)
    tmp = np.zeros(n)
    v = acf[0]
    if not v > 0.0:
        return x, 0.0, 0, v
    logdet = np.log(v)
    for c in range(m):
        x[0, c] = rhs[0, c] / v
    for k in range(1, n):
        # order-k forward predictor from order k-1
        s = acf[k]
        for j in range(1, k):
            s -= phi[j] * acf[k - j]
        refl = s / v
        for j in range(1, k):
            tmp[j] = phi[j] - refl * phi[k - j]
        for j in range(1, k):
            phi[j] = tmp[j]
        phi[k] = refl
        v = v * (1.0 - refl * refl)
        if not v > 0.0:
            return x, logdet, k, v
        logdet += np.log(v)
        # extend the solution of the leading k x k system by one row
        for c in range(m):
            e = rhs[k, c]
            for j in range(k):
                e -= acf[k - j] * x[j, c]
            mu = e / v
            for j in range(k):
                x[j, c] -= mu * phi[k - j]
            x[k, c] = mu
    return x, logdet, -1, v


@njit(cache=True)
def _whiten(acf, cols):
    # cols is (m, n), each row one series; returns prediction errors (m, n)
    m, n = cols.shape
    err = np.zeros((m, n))
    var = np.zeros(n)
    phi = np.zeros(n)
    tmp = np.zeros(n)
    v = acf[0]
    var[0] = v
    if not v > 0.0:
        return err, var, 0
    for c in range(m):
        err[c, 0] = cols[c, 0]
    for k in range(1, n):
        s = acf[k]
        for j in range(1, k):
            s -= phi[j] * acf[k - j]
        refl = s / v
        for j in range(1, k):
            tmp[j] = phi[j] - refl * phi[k - j]
        for j in range(1, k):
            phi[j] = tmp[j]
        phi[k] = refl
        v = v * (1.0 - refl * refl)
        var[k] = v
        if not v > 0.0:
            return err, var, k
        for c in range(m):
            e = cols[c, k]
            for j in range(1, k + 1):
                e -= phi[j] * cols[c, k - j]
            err[c, k] = e
    return err, var, -1


@njit(cache=True)
def _color(acf, noise):
    # inverse of _whiten with unit-variance innovations
    m, n = noise.shape
    out = np.zeros((m, n))
    phi = np.zeros(n)
    tmp = np.zeros(n)
    v = acf[0]
    if not v > 0.0:
        return out, 0, v
    sd = np.sqrt(v)
    for c in range(m):
        out[c, 0] = sd * noise[c, 0]
    for k in range(1, n):
        s = acf[k]
        for j in range(1, k):
            s -= phi[j] * acf[k - j]
        refl = s / v
        for j in range(1, k):
            tmp[j] = phi[j] - refl * phi[k - j]
        for j in range(1, k):
            phi[j] = tmp[j]
        phi[k] = refl
        v = v * (1.0 - refl * refl)
        if not v > 0.0:
            return out, k, v
        sd = np.sqrt(v)
        for c in range(m):
            pred = 0.0
            for j in range(1, k + 1):
                pred += phi[j] * out[c, k - j]
            out[c, k] = pred + sd * noise[c, k]
    return out, -1, v


def _as_acf(acf):
    acf = np.ascontiguousarray(acf, dtype=float)
    if acf.ndim != 1 or acf.size == 0:
        raise ValueError("acf must be a nonempty 1-d sequence")
    return acf


def dl_solve(acf, rhs):
    """
    Solve ``Toeplitz(acf) @ x = rhs`` and compute the log-determinant.

    Parameters
    ----------
    acf : (N,) array_like
        first row of the symmetric Toeplitz matrix ``V``.
    rhs : (N,) or (N, m) array_like
        right-hand side(s).

    Returns
    -------
    solution : np.ndarray
        ``V^{-1} rhs``, same shape as `!rhs`.
    logdet : float
        ``log|V|``, the sum of the log innovation variances.

    Raises
    ------
    NotPositiveDefiniteError
        if an innovation variance is not positive.
    """
    acf = _as_acf(acf)
    rhs = np.asarray(rhs, dtype=float)
    vector = rhs.ndim == 1
    b = np.ascontiguousarray(rhs.reshape(len(rhs), -1))
    if b.shape[0] != acf.size:
        raise ValueError(f"rhs has {b.shape[0]} rows, expected {acf.size}")
    x, logdet, fail, v = _levinson(acf, b)
    if fail >= 0:
        raise NotPositiveDefiniteError(fail, v)
    return (x[:, 0] if vector else x), float(logdet)


def dl_whiten(acf, cols):
    """
    Innovations (one-step prediction errors) of each column under ``Toeplitz(acf)``.

    For a column ``a``, ``a' V^{-1} b = sum(e_a * e_b / var)`` and
    ``log|V| = sum(log(var))``.

    Parameters
    ----------
    acf : (N,) array_like
    cols : (N,) or (N, m) array_like

    Returns
    -------
    err : np.ndarray
        prediction errors, same shape as `!cols`.
    var : (N,) np.ndarray
        innovation variances.
    """
    acf = _as_acf(acf)
    cols = np.asarray(cols, dtype=float)
    vector = cols.ndim == 1
    c = np.ascontiguousarray(cols.reshape(len(cols), -1).T)
    if c.shape[1] != acf.size:
        raise ValueError(f"cols has {c.shape[1]} rows, expected {acf.size}")
    err, var, fail = _whiten(acf, c)
    if fail >= 0:
        raise NotPositiveDefiniteError(fail, var[fail])
    return (err[0] if vector else err.T), var


def substream(seed, *keys):
    """Independent random generator derived from ``(seed, *keys)``.

    String keys are hashed with CRC32, so the stream depends only on the
    values passed, never on call order or scheduling.
    """
    import zlib
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode()))
        else:
            entropy.append(int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def simulate_stationary(acf, n_paths, cols=1, seed=0):
    """
    Exact draws of a stationary Gaussian series with autocovariance `!acf`.

    Parameters
    ----------
    acf : (N,) array_like
    n_paths : int
    cols : int
        number of independent columns per path (spatial dimension).
    seed : int
        path ``i`` uses the substream ``(seed, i)``.

    Returns
    -------
    list of (N, cols) np.ndarray
    """
    acf = _as_acf(acf)
    n = acf.size
    noise = np.empty((n_paths * cols, n))
    for i in range(n_paths):
        rng = substream(seed, i)
        noise[i * cols:(i + 1) * cols] = rng.standard_normal((n, cols)).T
    out, fail, v = _color(acf, noise)
    if fail >= 0:
        raise NotPositiveDefiniteError(fail, v)
    return [out[i * cols:(i + 1) * cols].T.copy() for i in range(n_paths)]


def _fft_length(n):
    return 1 << max(0, int(n - 1).bit_length())


def toeplitz_matvec(first_row, first_col, x):
    """
    Product of a Toeplitz matrix with a vector using circulant embedding.

    The matrix is ``M x L`` with ``T[i, j] = first_row[j - i]`` for ``j >= i``
    and ``first_col[i - j]`` otherwise, where ``L = len(first_row)`` and
    ``M = len(first_col)``.

    Parameters
    ----------
    first_row : (L,) array_like
    first_col : (M,) array_like
        ``first_col[0]`` must equal ``first_row[0]``.
    x : (L,) array_like

    Returns
    -------
    (M,) np.ndarray
    """
    row = np.asarray(first_row, dtype=float)
    col = np.asarray(first_col, dtype=float)
    x = np.asarray(x, dtype=float)
    if row.ndim != 1 or col.ndim != 1 or x.ndim != 1:
        raise ValueError("first_row, first_col and x must be 1-d")
    if row[0] != col[0]:
        raise ValueError("first_row[0] and first_col[0] differ")
    if x.size != row.size:
        raise ValueError(f"x has length {x.size}, expected {row.size}")
    m, ell = col.size, row.size
    nfft = _fft_length(m + ell - 1)
    circ = np.zeros(nfft)
    circ[:m] = col
    if ell > 1:
        circ[nfft - ell + 1:] = row[:0:-1]
    y = np.fft.irfft(np.fft.rfft(circ) * np.fft.rfft(x, nfft), nfft)
    return y[:m]


def dense_toeplitz(acf):
    """Dense symmetric Toeplitz matrix; for tests and small problems."""
    acf = np.asarray(acf, dtype=float)
    idx = np.abs(np.subtract.outer(np.arange(acf.size), np.arange(acf.size)))
    return acf[idx]
