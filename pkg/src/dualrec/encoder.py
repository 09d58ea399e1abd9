"""Parameter-free graph convolution over user-item bipartite graphs.

Users occupy rows ``0..m-1`` of an embedding table, items ``m..m+n-1``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError
from .sparse import RowBlocked, SparseMatrix, spmm_dense, sym_normalize


def lift_bipartite(b: SparseMatrix) -> SparseMatrix:
    """[[0, B], [Bᵀ, 0]] with users first."""
    bs = b.to_scipy()
    m, n = b.shape
    lifted = sp.bmat([[sp.csr_matrix((m, m)), bs], [bs.T, sp.csr_matrix((n, n))]], format="csr")
    return SparseMatrix.from_scipy(lifted)


def normalized_adjacency(b: SparseMatrix) -> SparseMatrix:
    return sym_normalize(lift_bipartite(b))


class LightEncoder:
    """Z = N^L E with N = D̂^{-1/2}(A+I)D̂^{-1/2}; no layer combination, no weights.

    N is symmetric, so the backward pass is the same propagation applied to
    the incoming gradient.
    """

    name = "light"

    def __init__(self, graph: SparseMatrix, layers: int = 2):
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.layers = layers
        self.n_users, self.n_items = graph.shape
        self.norm = normalized_adjacency(graph)
        self._op = RowBlocked(self.norm)

    def _check(self, e):
        if e.shape[0] != self.n_users + self.n_items:
            raise ShapeError(f"embedding table has {e.shape[0]} rows, graph has {self.n_users + self.n_items} nodes")

    def forward(self, e: np.ndarray) -> np.ndarray:
        self._check(e)
        z = e
        for _ in range(self.layers):
            z = self._op @ z
        return np.asarray(z)

    def backward(self, dz: np.ndarray) -> np.ndarray:
        return self.forward(dz)

    __call__ = forward


class GCNEncoder(LightEncoder):
    # Weight-free symmetric-normalized GCN; with no per-layer transforms it
    # reduces to the same propagation.
    name = "gcn"


ENCODERS = {"light": LightEncoder, "gcn": GCNEncoder}


def make_encoder(kind: str, graph: SparseMatrix, layers: int):
    try:
        cls = ENCODERS[kind]
    except KeyError:
        raise ValueError(f"unknown encoder {kind!r}; known: {sorted(ENCODERS)}") from None
    return cls(graph, layers)


def propagate(e: np.ndarray, g: SparseMatrix, layers: int = 2) -> np.ndarray:
    if layers < 1:
        raise ValueError("layers must be >= 1")
    n = normalized_adjacency(g)
    if e.shape[0] != n.n_rows:
        raise ShapeError(f"embedding table has {e.shape[0]} rows, graph has {n.n_rows} nodes")
    z = np.asarray(e, dtype=np.float64)
    for _ in range(layers):
        z = spmm_dense(n, z)
    return z
