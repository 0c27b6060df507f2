"""Input validation helpers shared across the package.

Small, explicit checks in the spirit of ``sklearn.utils.validation``:
every public operation validates its array inputs once, up front, and
raises ``ValueError`` with the offending argument named.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_array",
    "check_positions",
    "check_faces",
    "check_finite",
    "check_unit_rows",
    "check_simplex_rows",
]


def check_array(a, name, shape=None, dtype=np.float64, ndim=None):
    """Coerce ``a`` to an ndarray and verify its shape.

    ``shape`` entries of ``None`` match any extent. Returns the coerced
    array (C-contiguous, of ``dtype`` unless ``dtype`` is None).
    """
    arr = np.asarray(a)
    if dtype is not None:
        arr = np.ascontiguousarray(arr, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim} dims, got shape {arr.shape}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def check_finite(a, name):
    arr = np.asarray(a)
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(arr)))
        raise ValueError(f"{name}: {bad} non-finite entries")
    return arr


def check_positions(a, name="positions", n=None):
    """Validate an (n, 3) float position array, rejecting non-finite input."""
    arr = check_array(a, name, shape=(n, 3))
    check_finite(arr, name)
    return arr


def check_faces(faces, n_vertices, name="faces"):
    """Validate an (f, 3) integer triangle list indexing fewer than ``n_vertices``."""
    arr = np.asarray(faces)
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name}: expected (f, 3) triangles, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= n_vertices):
        raise ValueError(f"{name}: vertex index out of range [0, {n_vertices})")
    return arr


def check_unit_rows(a, name, atol=1e-6):
    """Verify every row of ``a`` has unit Euclidean norm within ``atol``."""
    arr = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1)
    if not np.allclose(norms, 1.0, atol=atol):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"{name}: rows not unit length (max deviation {worst:.3e})")
    return arr


def check_simplex_rows(a, name, atol=1e-6):
    """Verify rows are nonnegative and sum to one within ``atol``."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.min() < -atol:
        raise ValueError(f"{name}: negative weight {arr.min():.3e}")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=atol):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"{name}: rows do not sum to 1 (max deviation {worst:.3e})")
    return arr
