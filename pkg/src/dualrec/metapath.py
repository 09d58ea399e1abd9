"""Meta-paths, commuting matrices and link-scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .hetgraph import HeteroGraph
from .sparse import SparseMatrix, spgemm, transpose


@dataclass(frozen=True)
class MetaPath:
    types: tuple
    # one (relation name, transposed) per consecutive type pair
    legs: tuple

    @property
    def name(self):
        return "".join(self.types) if all(len(t) == 1 for t in self.types) else "-".join(self.types)

    def __str__(self):
        return "-".join(self.types)


def parse_metapath(g: HeteroGraph, text: str) -> MetaPath:
    """Resolve ``"U-U-A"`` style declarations against the relations of ``g``.

    Each leg uses a stored relation running in that direction, or the
    transpose of one running the other way. Single-letter types may also be
    written without dashes (``"UUA"``).
    """
    if "-" not in text and len(text) > 1 and all(c in g.node_counts for c in text):
        text = "-".join(text)
    types = tuple(t.strip() for t in text.split("-"))
    if len(types) < 2 or any(not t for t in types):
        raise ConfigError(f"meta-path {text!r} needs at least two node types")
    for t in types:
        if t not in g.node_counts:
            raise ConfigError(f"meta-path {text!r}: unknown node type {t!r}")
    if types[0] != g.user_type or types[-1] != g.item_type:
        raise ConfigError(f"meta-path {text!r} must start at {g.user_type} and end at {g.item_type}")
    legs = []
    for a, b in zip(types[:-1], types[1:]):
        forward = [r.name for r in g.relations.values() if (r.src, r.dst) == (a, b)]
        backward = [r.name for r in g.relations.values() if (r.src, r.dst) == (b, a)]
        if len(forward) > 1 or (not forward and len(backward) > 1):
            raise ConfigError(f"meta-path {text!r}: leg {a}-{b} is ambiguous")
        if forward:
            legs.append((forward[0], False))
        elif backward:
            legs.append((backward[0], True))
        else:
            raise ConfigError(f"meta-path {text!r}: no relation for leg {a}-{b}")
    return MetaPath(types, tuple(legs))


def commuting_matrix(g: HeteroGraph, p: MetaPath | str) -> SparseMatrix:
    """C = W^{12} W^{23} ... ; entry (u, v) counts path instances from u to v."""
    if isinstance(p, str):
        p = parse_metapath(g, p)
    c = None
    for name, transposed in p.legs:
        if name not in g.relations:
            raise ConfigError(f"meta-path {p}: relation {name!r} missing from graph")
        w = g.relations[name].matrix
        if transposed:
            w = transpose(w)
        c = w if c is None else spgemm(c, w)
    return c


@dataclass(frozen=True)
class LinkScoreMatrix:
    scores: SparseMatrix
    source_path: MetaPath | None = None

    @property
    def shape(self):
        return self.scores.shape


def link_score(c: SparseMatrix, source_path=None) -> LinkScoreMatrix:
    """Divide each row by its maximum; empty rows stay empty."""
    if c.nnz and c.values.min() < 0:
        raise ValueError("commuting matrix must be non-negative")
    if c.nnz == 0:
        return LinkScoreMatrix(c, source_path)
    row_max = np.maximum.reduceat(c.values, c.row_offsets[:-1][c.row_nnz() > 0])
    per_entry = np.repeat(row_max, c.row_nnz()[c.row_nnz() > 0])
    scores = SparseMatrix(c.n_rows, c.n_cols, c.row_offsets, c.col_indices, c.values / per_entry)
    return LinkScoreMatrix(scores, source_path)


@dataclass(frozen=True)
class CorrelationBin:
    lo: float
    hi: float
    probability: float
    support: int


def correlation_report(m: LinkScoreMatrix | SparseMatrix, r: SparseMatrix, bins: int,
                       include_zero: bool = False) -> list:
    """Interaction probability per link-score bin.

    Bins split (0, 1] into ``bins`` right-closed intervals over the stored
    link-scores. The pairs with score 0 (everything not stored) are the
    optional extra bin ``[0, 0]`` put first. Empty bins carry probability nan.
    """
    scores = m.scores if isinstance(m, LinkScoreMatrix) else m
    if scores.shape != r.shape:
        raise ValueError(f"shape mismatch {scores.shape} vs {r.shape}")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(0.0, 1.0, bins + 1)
    vals = scores.values
    hit = r.contains(scores.row_ids(), scores.col_indices)
    # right-closed: (edges[b], edges[b+1]]
    which = np.clip(np.searchsorted(edges, vals, side="left") - 1, 0, bins - 1)
    support = np.bincount(which, minlength=bins)
    hits = np.bincount(which, weights=hit.astype(np.float64), minlength=bins)
    out = []
    if include_zero:
        n_zero = scores.n_rows * scores.n_cols - scores.nnz
        zero_hits = r.nnz - int(hit.sum())
        out.append(CorrelationBin(0.0, 0.0, zero_hits / n_zero if n_zero else float("nan"), int(n_zero)))
    for b in range(bins):
        prob = hits[b] / support[b] if support[b] else float("nan")
        out.append(CorrelationBin(float(edges[b]), float(edges[b + 1]), float(prob), int(support[b])))
    return out


def report_csv(rows) -> str:
    lines = ["bin_lo,bin_hi,probability,support"]
    lines += [f"{b.lo:.6g},{b.hi:.6g},{b.probability:.6f},{b.support}" for b in rows]
    return "\n".join(lines) + "\n"
