"""Compressed sparse row matrices and the handful of kernels the model needs.

Storage is our own (``row_offsets``/``col_indices``/``values``); the heavy
products are delegated to scipy's CSR routines, which implement the same
row-by-row accumulator scheme.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        self.check()

    def check(self):
        ro, ci, v = self.row_offsets, self.col_indices, self.values
        if self.n_rows < 0 or self.n_cols < 0:
            raise ShapeError("negative dimension")
        if len(ro) != self.n_rows + 1 or ro[0] != 0 or ro[-1] != len(v) or len(ci) != len(v):
            raise ShapeError("inconsistent row offsets")
        if np.any(np.diff(ro) < 0):
            raise ShapeError("row offsets must be non-decreasing")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ShapeError("column index out of range")
        if len(ci) > 1:
            # strictly increasing within a row: every step that is not a row start must increase
            step_ok = np.diff(ci) > 0
            row_start = np.zeros(len(ci), dtype=bool)
            row_start[ro[1:-1][ro[1:-1] < len(ci)]] = True
            if not np.all(step_ok | row_start[1:]):
                raise ShapeError("column indices must be strictly increasing within a row")
        if np.any(v == 0):
            raise ShapeError("explicit zeros must be dropped")

    # construction ---------------------------------------------------------

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_coo(cls, rows, cols, values, shape, binary=False) -> "SparseMatrix":
        """Build from triplets. Duplicates are summed, or collapsed to 1 if ``binary``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), rows.shape)
        n_rows, n_cols = shape
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError("triplet index out of range")
        m = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
        if binary:
            m.sum_duplicates()
            m.eliminate_zeros()
            m.data[:] = 1.0
        return cls.from_scipy(m)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, n_rows, n_cols) -> "SparseMatrix":
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64), [], [])

    # views ----------------------------------------------------------------

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.values)

    @property
    def T(self) -> "SparseMatrix":
        return transpose(self)

    def to_scipy(self) -> sp.csr_matrix:
        # scipy copies nothing here; it must never be handed back mutated
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def row(self, i):
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, aligned with ``col_indices``."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row_ids(), weights=self.values, minlength=self.n_rows)

    def binarize(self) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, np.ones(self.nnz))

    def take_rows(self, rows) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy()[np.asarray(rows, dtype=np.int64)])

    def submatrix(self, rows, cols) -> "SparseMatrix":
        m = self.to_scipy()[np.asarray(rows, dtype=np.int64)][:, np.asarray(cols, dtype=np.int64)]
        return SparseMatrix.from_scipy(m)

    def contains(self, rows, cols) -> np.ndarray:
        """Boolean mask: is (rows[k], cols[k]) a stored entry."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros(len(rows), dtype=bool)
        if self.nnz == 0 or len(rows) == 0:
            return out
        key = self.row_ids() * self.n_cols + self.col_indices
        probe = rows * self.n_cols + cols
        pos = np.searchsorted(key, probe)
        pos = np.minimum(pos, len(key) - 1)
        return key[pos] == probe

    def same_as(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def spgemm(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    if a.n_cols != b.n_rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return SparseMatrix.from_scipy(a.to_scipy() @ b.to_scipy())


def transpose(a: SparseMatrix) -> SparseMatrix:
    return SparseMatrix.from_scipy(a.to_scipy().T.tocsr())


def spmm_dense(a: SparseMatrix, e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or a.n_cols != e.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by dense {e.shape}")
    return np.asarray(a.to_scipy() @ e)


# Worker threads for row-blocked sparse x dense products. Each output row is
# computed by exactly one block, so results do not depend on the count.
_threads = None
_pool = None


def set_threads(n: int | None):
    global _threads, _pool
    _threads = None if n is None else max(1, int(n))
    if _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None


def get_threads() -> int:
    return _threads if _threads is not None else min(os.cpu_count() or 1, 8)


class RowBlocked:
    """A CSR matrix pre-split into row blocks for threaded products with dense matrices."""

    def __init__(self, a: SparseMatrix, min_rows: int = 2048):
        self.shape = a.shape
        self._csr = a.to_scipy()
        self._min_rows = min_rows
        self._blocks = {}

    def _split(self, n):
        if n not in self._blocks:
            cuts = np.linspace(0, self.shape[0], n + 1).astype(int)
            self._blocks[n] = [self._csr[lo:hi] for lo, hi in zip(cuts[:-1], cuts[1:])]
        return self._blocks[n]

    def __matmul__(self, e):
        global _pool
        n = min(get_threads(), max(1, self.shape[0] // self._min_rows))
        if n == 1:
            return np.asarray(self._csr @ e)
        if _pool is None:
            _pool = ThreadPoolExecutor(max_workers=get_threads())
        parts = list(_pool.map(lambda b: b @ e, self._split(n)))
        return np.vstack(parts)


def sym_normalize(adj: SparseMatrix) -> SparseMatrix:
    """D̂^{-1/2} (A + I) D̂^{-1/2} with D̂ = D + I."""
    if adj.n_rows != adj.n_cols:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    n = adj.n_rows
    a_hat = adj.to_scipy() + sp.identity(n, format="csr")
    deg = adj.row_sums() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return SparseMatrix.from_scipy(d @ a_hat @ d)
