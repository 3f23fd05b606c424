"""Banded difference operators and banded SPD solves.

The difference matrix of order ``q`` is never formed densely: it is stored as
its stencil (the alternating binomial coefficients) plus the series length,
and every product costs O(n * q).
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, FactorizationError

DEFAULT_K = 2


@dataclass(frozen=True)
class DifferenceOperator:
    """The (n - order) x n forward difference matrix of the given order."""

    n: int
    order: int
    stencil: np.ndarray

    @property
    def row_count(self):
        return self.n - self.order

    @property
    def bands(self):
        # every row carries the same stencil
        return np.tile(self.stencil, (self.row_count, 1))

    def to_dense(self):
        out = np.zeros((self.row_count, self.n))
        for r in range(self.row_count):
            out[r, r:r + self.order + 1] = self.stencil
        return out

    def __matmul__(self, v):
        return apply(self, v)


def build_diff(n, order):
    """Difference operator D^(order) for a series of length ``n``.

    ``order`` is k + 1 in the trend-filtering parameterisation, so the
    default piecewise-quadratic fit (k = 2) uses ``build_diff(n, 3)``.
    """
    n = int(n)
    order = int(order)
    if order < 0:
        raise DimensionError(f"difference order must be >= 0, got {order}")
    if n < order + 1:
        raise DimensionError(f"need n >= order + 1 (n={n}, order={order})")
    stencil = _kernels.diff_stencil(order)
    stencil.setflags(write=False)
    return DifferenceOperator(n=n, order=order, stencil=stencil)


def apply(op, v):
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim == 2:
        return np.column_stack([apply(op, v[:, j]) for j in range(v.shape[1])]) \
            if v.shape[1] else np.empty((op.row_count, 0))
    if v.shape != (op.n,):
        raise DimensionError(f"expected a vector of length {op.n}, got shape {v.shape}")
    out = np.empty(op.row_count)
    return _kernels.diff_apply(np.asarray(op.stencil), v, out)


def apply_transpose(op, u):
    u = np.ascontiguousarray(u, dtype=float)
    if u.ndim == 2:
        return np.column_stack([apply_transpose(op, u[:, j]) for j in range(u.shape[1])])
    if u.shape != (op.row_count,):
        raise DimensionError(
            f"expected a vector of length {op.row_count}, got shape {u.shape}")
    out = np.empty(op.n)
    return _kernels.diff_apply_t(np.asarray(op.stencil), u, out)


@dataclass(frozen=True)
class BandedSPDSystem:
    """Symmetric positive-definite matrix kept as its lower band.

    ``diagonals[d, i]`` holds ``A[i + d, i]``. The Cholesky factor is computed
    once at construction and reused by every :func:`solve_banded` call.
    """

    n: int
    bandwidth: int
    diagonals: np.ndarray
    factor: np.ndarray

    @classmethod
    def from_diagonals(cls, diagonals):
        ab = np.ascontiguousarray(diagonals, dtype=float)
        if ab.ndim != 2:
            raise DimensionError("band storage must be 2-D (bandwidth + 1, n)")
        cb = np.empty_like(ab)
        if not _kernels.band_cholesky(ab, cb):
            raise FactorizationError("matrix is not positive definite")
        ab.setflags(write=False)
        cb.setflags(write=False)
        return cls(n=ab.shape[1], bandwidth=ab.shape[0] - 1, diagonals=ab, factor=cb)

    @classmethod
    def from_dense(cls, a, bandwidth):
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        ab = np.zeros((bandwidth + 1, n))
        for d in range(bandwidth + 1):
            ab[d, :n - d] = np.diagonal(a, -d)
        return cls.from_diagonals(ab)

    def to_dense(self):
        a = np.zeros((self.n, self.n))
        for d in range(self.bandwidth + 1):
            idx = np.arange(self.n - d)
            a[idx + d, idx] = self.diagonals[d, :self.n - d]
            a[idx, idx + d] = self.diagonals[d, :self.n - d]
        return a

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        out = self.diagonals[0] * x
        for d in range(1, self.bandwidth + 1):
            out[d:] += self.diagonals[d, :self.n - d] * x[:-d]
            out[:-d] += self.diagonals[d, :self.n - d] * x[d:]
        return out


def gram_system(op, diag_shift=0.0, scale=1.0):
    """``diag_shift * I + scale * D'D`` as a factorised banded system."""
    ab = np.empty((op.order + 1, op.n))
    _kernels.gram_band(np.asarray(op.stencil), op.n, float(diag_shift), float(scale), ab)
    return BandedSPDSystem.from_diagonals(ab)


def solve_banded(system, rhs):
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != system.n:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, system has {system.n}")
    work = np.array(rhs.reshape(system.n, -1), order="C")
    _kernels.band_solve(np.asarray(system.factor), work)
    return work.reshape(rhs.shape)
