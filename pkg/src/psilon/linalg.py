"""Dense float64 kernels and seeded RNG helpers.

Everything here is a thin, shape-checked layer over numpy.  All arrays are
float64; the bound inequalities tested elsewhere are tight enough that
float32 would eat the tolerances.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "DimensionError",
    "as_matrix",
    "as_vector",
    "make_rng",
    "matmul",
    "op_inf_norm",
    "op_inf_one_norm",
    "orthogonal_init",
]


class DimensionError(ValueError):
    """Incompatible operand shapes."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; identical seed gives an identical stream."""
    return np.random.default_rng(seed)


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a vector, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def op_inf_norm(w: np.ndarray) -> float:
    """Operator norm induced by the sup norm: max over rows of the row L1 norm."""
    w = as_matrix(w)
    if w.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(w), axis=1)))


def op_inf_one_norm(w: np.ndarray, exact_dim_limit: int = 16) -> tuple[float, bool]:
    """sup over ||t||_inf <= 1 of ||W t||_1.

    The sup is attained at a sign vertex t in {-1,+1}^cols, so for
    cols <= exact_dim_limit we enumerate all 2^cols vertices and the result
    is exact.  Beyond that the problem is NP-hard in general and we fall
    back to the entrywise absolute sum, a valid upper bound; the second
    return value flags which path was taken.
    """
    w = as_matrix(w)
    n_cols = w.shape[1]
    if n_cols == 0 or w.size == 0:
        return 0.0, True
    if n_cols > exact_dim_limit:
        return float(np.sum(np.abs(w))), False
    best = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=n_cols):
        val = float(np.sum(np.abs(w @ np.array(signs))))
        if val > best:
            best = val
    return best, True


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormalized Gaussian matrix.

    Rows are orthonormal when rows <= cols, columns orthonormal otherwise
    (tall matrices are handled by orthonormalizing the transpose).  Signs
    are fixed from the QR diagonal so the draw is deterministic in seed.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    gauss = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(gauss)
    q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    if rows <= cols:
        return np.ascontiguousarray(q.T)
    return np.ascontiguousarray(q)
