"""Input validation helpers shared across the package.

The conventions follow scikit-learn's validation utilities: coerce to
float64 ndarrays, fail early with messages that name the offending
argument, and return the validated (possibly copied) array.
"""

import numpy as np


class NotSPDError(ValueError):
    """A matrix required to be symmetric positive definite is not."""


class ConvergenceError(RuntimeError):
    """An iterative procedure failed to reach its stopping criterion."""


class LineSearchError(RuntimeError):
    """Backtracking line search could not find an acceptable step."""


def as_float_array(a, name="array", allow_empty=False):
    """Coerce to a C-contiguous float64 ndarray with finite entries."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.size == 0 and not allow_empty:
        raise ValueError(f"{name} must be non-empty")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, k=None, name="vector"):
    arr = as_float_array(a, name=name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if k is not None and arr.shape[0] != k:
        raise ValueError(f"{name} must have length {k}, got {arr.shape[0]}")
    return arr


def as_matrix(a, rows=None, cols=None, name="matrix"):
    arr = as_float_array(a, name=name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


def check_symmetric(mat, name="matrix", tol=1e-12):
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > tol * scale:
        raise NotSPDError(f"{name} is not symmetric within {tol}")


def spd_cholesky(mat, name="matrix", sym_tol=1e-12):
    """Validate symmetry and positive definiteness; return the lower Cholesky factor.

    No jitter is applied: a failed factorization raises NotSPDError.
    """
    mat = as_matrix(mat, name=name)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    check_symmetric(mat, name=name, tol=sym_tol)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"{name} is not positive definite") from exc


def psd_factor(mat, name="matrix", tol=1e-10):
    """Lower-triangular-ish factor F with F @ F.T == mat, allowing singular PSD input.

    Tries a Cholesky factorization first; degenerate matrices (e.g. an
    all-zero covariance used in tests) fall back to an eigendecomposition
    with small negative eigenvalues clipped to zero.
    """
    mat = as_matrix(mat, name=name)
    check_symmetric(mat, name=name)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(mat)
        scale = max(1.0, float(vals.max(initial=0.0)))
        if vals.min() < -tol * scale:
            raise NotSPDError(f"{name} is not positive semidefinite")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def check_simplex(p, name="distribution", tol=1e-8):
    p = as_vector(p, name=name)
    if p.min() < -tol:
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} does not sum to 1 within {tol}")
    return p
