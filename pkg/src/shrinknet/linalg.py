"""Dense float64 matrix and vector helpers for MLP training.

Thin, shape-checked wrappers over numpy. Matrices are 2-D float64 arrays
in row-major (C) order, vectors are 1-D float64 arrays. Every public
operation returns a fresh read-only array, so results can be shared
between threads without copying.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence

import numpy as np
import numpy.typing as npt

logger = logging.getLogger(__name__)

Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]


class ShapeError(ValueError):
    """Operand shapes are incompatible, or an index is out of range."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _shape(a: np.ndarray) -> str:
    return "x".join(str(d) for d in a.shape)


def _require_matrix(a: np.ndarray, name: str) -> None:
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {a.shape}")


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def matrix(rows: Sequence[Sequence[float]] | np.ndarray) -> Matrix:
    """Build a validated matrix. Raises ShapeError on ragged or non-finite input."""
    try:
        a = np.array(rows, dtype=np.float64, order="C")
    except ValueError as e:
        raise ShapeError(f"Cannot build a rectangular matrix: {e}") from e
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, 0)
    _require_matrix(a, "matrix")
    if not np.all(np.isfinite(a)):
        raise ShapeError("Matrix entries must be finite")
    return _freeze(a)


def vector(values: Sequence[float] | np.ndarray) -> Vector:
    """Build a validated vector."""
    a = np.array(values, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"vector must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError("Vector entries must be finite")
    return _freeze(a)


def identity(n: int) -> Matrix:
    return _freeze(np.eye(n, dtype=np.float64))


def zeros(rows: int, cols: int) -> Matrix:
    return _freeze(np.zeros((rows, cols), dtype=np.float64))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b, shape (a.rows x b.cols)."""
    _require_matrix(a, "left operand")
    _require_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {_shape(a)} by {_shape(b)}")
    return _freeze(np.matmul(a, b))


def add_bias(m: Matrix, b: Vector) -> Matrix:
    """Add b to every column of m."""
    _require_matrix(m, "matrix")
    if b.ndim != 1 or b.shape[0] != m.shape[0]:
        raise ShapeError(
            f"Bias of length {b.shape[0] if b.ndim == 1 else b.shape} "
            f"does not match {m.shape[0]} rows"
        )
    return _freeze(m + b[:, np.newaxis])


def elementwise(m: Matrix, f: Callable[[np.ndarray], np.ndarray]) -> Matrix:
    """Apply a vectorised scalar function to every entry."""
    out = np.asarray(f(m), dtype=np.float64)
    if out.shape != m.shape:
        raise ShapeError(
            f"Elementwise function changed shape {_shape(m)} -> {_shape(out)}"
        )
    return _freeze(out.copy() if out is m else out)


def transpose(m: Matrix) -> Matrix:
    _require_matrix(m, "matrix")
    return _freeze(np.ascontiguousarray(m.T))


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    """Entrywise product of two equally shaped matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"Hadamard product of {_shape(a)} and {_shape(b)}")
    return _freeze(np.multiply(a, b))


def scale(m: Matrix, k: float) -> Matrix:
    return _freeze(np.multiply(m, float(k)))


def col_slice(m: Matrix, indices: Sequence[int] | np.ndarray) -> Matrix:
    """Select columns by index list, preserving the list order."""
    _require_matrix(m, "matrix")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[1]):
        bad = idx[(idx < 0) | (idx >= m.shape[1])][0]
        raise ShapeError(f"Column index {bad} out of range for {_shape(m)}")
    return _freeze(np.ascontiguousarray(m[:, idx]))


def row_slice(m: Matrix, indices: Sequence[int] | np.ndarray) -> Matrix:
    """Select rows by index list, preserving the list order."""
    _require_matrix(m, "matrix")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        bad = idx[(idx < 0) | (idx >= m.shape[0])][0]
        raise ShapeError(f"Row index {bad} out of range for {_shape(m)}")
    return _freeze(np.ascontiguousarray(m[idx, :]))
