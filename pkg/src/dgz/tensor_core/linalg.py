import numpy as np

from dgz.errors import ContractError, NotPSDError, ShapeError
from dgz.tensor_core import autodiff


def as_matrix(x, dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a, b):
    """Matrix product of two 2-D operands (arrays or tensors)."""
    if isinstance(a, autodiff.Tensor) or isinstance(b, autodiff.Tensor):
        return autodiff.matmul(a, b)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def cholesky_psd(s, jitter=0.0, max_retries=3):
    """Lower-triangular ``L`` with ``L @ L.T == s + j*I``.

    Tries the requested ``jitter`` first; on a pivot failure retries up to
    ``max_retries`` times starting from 1e-6 (or 10x the request), growing
    tenfold each time.  Returns
    ``(L, j)`` with the jitter that was actually used.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"cholesky_psd: matrix must be square, got {s.shape}")
    if jitter < 0:
        raise ContractError("cholesky_psd: jitter must be non-negative")
    if not np.all(np.isfinite(s)):
        raise NotPSDError("cholesky_psd: non-finite entries")
    if np.max(np.abs(s - s.T), initial=0.0) > 1e-8:
        raise ContractError("cholesky_psd: matrix is not symmetric")
    d = s.shape[0]
    eye = np.eye(d)
    attempts = [float(jitter)]
    j = max(float(jitter) * 10.0, 1e-6) if jitter > 0 else 1e-6
    for _ in range(max_retries):
        attempts.append(j)
        j *= 10.0
    for j in attempts:
        try:
            return np.linalg.cholesky(s + j * eye), j
        except np.linalg.LinAlgError:
            continue
    raise NotPSDError(f"cholesky_psd: failed with jitter up to {attempts[-1]:g}")


def sample_gaussian(mean, chol, n, rng):
    """``n`` rows of ``mean + chol @ z`` with ``z`` standard normal."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    chol = np.asarray(chol, dtype=np.float64)
    d = mean.shape[0]
    if chol.shape != (d, d):
        raise ShapeError(f"sample_gaussian: chol {chol.shape} does not match mean dim {d}")
    if n == 0:
        return np.zeros((0, d))
    z = rng.normal((int(n), d))
    return mean + z @ chol.T
