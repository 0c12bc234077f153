"""Input validation helpers shared by the solver and problem builders."""

import numbers

import numpy as np
import scipy.sparse as sp


def check_vector(v, name, size=None, allow_nonfinite=False):
    """Return ``v`` as a 1-D float64 array, optionally checking its length."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_matrix(M, name, shape=None):
    """Return ``M`` as a CSR sparse matrix of float64."""
    if sp.issparse(M):
        out = sp.csr_matrix(M, dtype=np.float64)
    else:
        arr = np.asarray(M, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
        out = sp.csr_matrix(arr)
    if shape is not None:
        for axis, (want, got) in enumerate(zip(shape, out.shape)):
            if want is not None and want != got:
                raise ValueError(f"{name} has shape {out.shape}; expected size {want} on axis {axis}")
    if out.nnz and not np.all(np.isfinite(out.data)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be non-negative, got {value!r}")
    return float(value)


def check_symmetric(M, name, rtol=1e-12):
    """Raise unless the sparse matrix ``M`` is symmetric to ``rtol`` relative."""
    diff = abs(M - M.T)
    scale = abs(M).max() if M.nnz else 0.0
    if diff.nnz and diff.max() > rtol * max(scale, np.finfo(float).tiny):
        raise ValueError(f"{name} is not symmetric")
    return M


def diagonal_entries(M):
    """Return the diagonal of ``M`` if it is a diagonal matrix, else ``None``."""
    M = sp.csr_matrix(M)
    if M.shape[0] != M.shape[1]:
        return None
    off = M - sp.diags(M.diagonal())
    off.eliminate_zeros()
    if off.nnz:
        return None
    return M.diagonal().copy()
