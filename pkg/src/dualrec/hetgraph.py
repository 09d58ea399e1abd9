"""Typed heterogeneous graphs: loading relation files, the activity filter and the
train/valid/test split of the user-item interactions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import read_kv
from .errors import ConfigError, EmptyDatasetError, ParseError
from .sparse import SparseMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelationSpec:
    name: str
    path: str
    src: str
    dst: str
    symmetric: bool = False


@dataclass(frozen=True)
class Schema:
    user_type: str
    item_type: str
    user_item: str
    relations: tuple
    meta_path: str | None = None

    @classmethod
    def from_file(cls, path) -> "Schema":
        kv = read_kv(path)
        return cls.from_mapping(kv, source=str(path))

    @classmethod
    def from_mapping(cls, kv: dict, source="<schema>") -> "Schema":
        rels = []
        for key, value in kv.items():
            if not key.startswith("relation."):
                continue
            parts = value.split()
            if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "symmetric"):
                raise ConfigError(f"{source}: relation '{key}' must be 'FILE SRC DST [symmetric]'")
            rels.append(RelationSpec(key[len("relation."):], parts[0], parts[1], parts[2], len(parts) == 4))
        for req in ("user_type", "item_type", "user_item"):
            if req not in kv:
                raise ConfigError(f"{source}: missing key '{req}'")
        names = {r.name for r in rels}
        if kv["user_item"] not in names:
            raise ConfigError(f"{source}: user_item relation '{kv['user_item']}' is not declared")
        ui = next(r for r in rels if r.name == kv["user_item"])
        if (ui.src, ui.dst) != (kv["user_type"], kv["item_type"]):
            raise ConfigError(f"{source}: user_item relation must run {kv['user_type']} -> {kv['item_type']}")
        return cls(kv["user_type"], kv["item_type"], kv["user_item"], tuple(rels), kv.get("meta_path"))


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str
    matrix: SparseMatrix


@dataclass(frozen=True)
class HeteroGraph:
    node_counts: dict
    relations: dict
    user_type: str
    item_type: str
    user_item: str
    # raw id of every dense index, per node type
    node_ids: dict = field(default_factory=dict)

    def __post_init__(self):
        n_edge_types = len(self.relations)
        if len(self.node_counts) + n_edge_types <= 2:
            raise ConfigError("a heterogeneous graph needs more than two node plus edge types")
        for rel in self.relations.values():
            if rel.matrix.shape != (self.node_counts[rel.src], self.node_counts[rel.dst]):
                raise ConfigError(f"relation {rel.name} has shape {rel.matrix.shape}, "
                                  f"expected ({self.node_counts[rel.src]}, {self.node_counts[rel.dst]})")
            if rel.matrix.nnz and not np.all(rel.matrix.values == 1.0):
                raise ConfigError(f"relation {rel.name} is not binary")

    @property
    def n_users(self):
        return self.node_counts[self.user_type]

    @property
    def n_items(self):
        return self.node_counts[self.item_type]

    @property
    def interactions(self) -> SparseMatrix:
        return self.relations[self.user_item].matrix

    def with_interactions(self, r: SparseMatrix) -> "HeteroGraph":
        rels = dict(self.relations)
        ui = rels[self.user_item]
        rels[self.user_item] = Relation(ui.name, ui.src, ui.dst, r)
        return replace(self, relations=rels)

    def stats(self) -> list:
        """Rows of (relation, n_edges, n_src, n_dst) as in a dataset statistics table."""
        return [(f"{r.src}-{r.dst}", r.matrix.nnz, self.node_counts[r.src], self.node_counts[r.dst])
                for r in self.relations.values()]

    def density(self) -> float:
        r = self.interactions
        return r.nnz / float(max(r.n_rows * r.n_cols, 1))


@dataclass(frozen=True)
class InteractionSplit:
    train: SparseMatrix
    valid: np.ndarray  # (k, 2) user, item
    test: np.ndarray

    @property
    def n_users(self):
        return self.train.n_rows

    @property
    def n_items(self):
        return self.train.n_cols


def _read_edges(path: Path):
    src, dst = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) not in (2, 3):
                raise ParseError(path, line_no, f"expected 2 or 3 fields, got {len(parts)}")
            try:
                a, b = int(parts[0]), int(parts[1])
                if len(parts) == 3:
                    float(parts[2])
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            src.append(a)
            dst.append(b)
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def load_relations(directory, schema: Schema) -> HeteroGraph:
    """Read every relation file named in ``schema``.

    Raw ids are re-indexed densely per node type over the union of all ids
    seen for that type (sorted by raw id). Weights, if present, are dropped:
    every recorded edge becomes a 1.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    raw = {}
    for rs in schema.relations:
        path = directory / rs.path
        if not path.exists():
            raise FileNotFoundError(f"relation file not found: {path}")
        raw[rs.name] = _read_edges(path)

    ids_by_type = {}
    for rs in schema.relations:
        s, d = raw[rs.name]
        ids_by_type.setdefault(rs.src, []).append(s)
        ids_by_type.setdefault(rs.dst, []).append(d)
    node_ids = {t: np.unique(np.concatenate(chunks)) for t, chunks in ids_by_type.items()}
    counts = {t: len(ids) for t, ids in node_ids.items()}

    relations = {}
    for rs in schema.relations:
        s, d = raw[rs.name]
        si = np.searchsorted(node_ids[rs.src], s)
        di = np.searchsorted(node_ids[rs.dst], d)
        if rs.symmetric:
            si, di = np.concatenate([si, di]), np.concatenate([di, si])
        m = SparseMatrix.from_coo(si, di, 1.0, (counts[rs.src], counts[rs.dst]), binary=True)
        relations[rs.name] = Relation(rs.name, rs.src, rs.dst, m)
    return HeteroGraph(counts, relations, schema.user_type, schema.item_type, schema.user_item, node_ids)


def restrict(g: HeteroGraph, keep: dict) -> HeteroGraph:
    """Keep only the given dense indices per node type and re-index densely.

    ``keep`` maps node type -> sorted index array; types not mentioned are kept whole.
    """
    keep = {t: np.asarray(keep.get(t, np.arange(n)), dtype=np.int64) for t, n in g.node_counts.items()}
    rels = {name: Relation(r.name, r.src, r.dst, r.matrix.submatrix(keep[r.src], keep[r.dst]))
            for name, r in g.relations.items()}
    counts = {t: len(k) for t, k in keep.items()}
    node_ids = {t: g.node_ids[t][keep[t]] if t in g.node_ids else keep[t] for t in keep}
    return HeteroGraph(counts, rels, g.user_type, g.item_type, g.user_item, node_ids)


def filter_min_interactions(g: HeteroGraph, k: int = 5, iterate: bool = False) -> HeteroGraph:
    """Drop users and items with fewer than ``k`` interactions.

    One pass by default: degrees are measured once on the input graph and both
    sides are cut simultaneously, so a survivor can end below ``k``. With
    ``iterate`` the cut is repeated until no node falls below ``k`` (k-core).
    """
    while True:
        r = g.interactions
        users = np.flatnonzero(r.row_nnz() >= k)
        items = np.flatnonzero(np.bincount(r.col_indices, minlength=r.n_cols) >= k)
        if len(users) == 0:
            raise EmptyDatasetError(f"no user has at least {k} interactions")
        if len(items) == 0:
            raise EmptyDatasetError(f"no item has at least {k} interactions")
        unchanged = len(users) == r.n_rows and len(items) == r.n_cols
        g = restrict(g, {g.user_type: users, g.item_type: items})
        if not iterate or unchanged:
            return g


def subsample_users(g: HeteroGraph, fraction: float, seed: int) -> HeteroGraph:
    from .seeding import rng_for

    rng = rng_for(seed, "subsample")
    n = g.n_users
    take = max(1, int(round(fraction * n)))
    users = np.sort(rng.choice(n, size=take, replace=False))
    return restrict(g, {g.user_type: users})


def split_interactions(g: HeteroGraph, seed: int, fractions=(0.8, 0.1)) -> InteractionSplit:
    """Uniform random split over interaction pairs.

    |train| = floor(0.8 N), |valid| = floor(0.1 N), test takes the remainder.
    """
    from .seeding import rng_for

    r = g.interactions
    users, items = r.row_ids(), r.col_indices
    n = len(users)
    perm = rng_for(seed, "split").permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_valid = int(np.floor(fractions[1] * n))
    tr, va, te = perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:]

    def pairs(idx):
        idx = np.sort(idx)
        return np.stack([users[idx], items[idx]], axis=1).astype(np.int64)

    train = SparseMatrix.from_coo(users[tr], items[tr], 1.0, r.shape, binary=True)
    return InteractionSplit(train, pairs(va), pairs(te))


def build_ui_graph(split: InteractionSplit) -> SparseMatrix:
    return split.train


def pairs_to_matrix(pairs: np.ndarray, shape) -> SparseMatrix:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return SparseMatrix.from_coo(pairs[:, 0], pairs[:, 1], 1.0, shape, binary=True)
