"""Small datasets written in the on-disk relation format.

``write_toy`` is the four-user movie example: u2's friends u1 and u3 both
watched m1 and one of them watched m2, giving the UUM commuting row [2, 1, 0].
A fourth user (u4, friend of u3) is needed for u3 to have two friends who
watched m2 while every other stated count stays true.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import write_kv

# 1-based raw ids
TOY_FRIENDS = [(1, 2), (2, 3), (3, 4)]
TOY_WATCHED = [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (4, 2), (4, 3)]


def _write_edges(path: Path, edges, weights=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, (a, b) in enumerate(edges):
            if weights is None:
                fh.write(f"{a}\t{b}\n")
            else:
                fh.write(f"{a}\t{b}\t{weights[i]}\n")


def write_toy(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_edges(d / "user_user.dat", TOY_FRIENDS)
    _write_edges(d / "user_movie.dat", TOY_WATCHED)
    write_kv(d / "schema.conf", {
        "user_type": "U",
        "item_type": "M",
        "user_item": "user_movie",
        "relation.user_movie": "user_movie.dat U M",
        "relation.user_user": "user_user.dat U U symmetric",
        "meta_path": "U-U-M",
    })
    return d / "schema.conf"


def planted_hin(n_users=200, n_items=300, n_groups=5, per_user=12, in_group=0.85, friends=4,
                item_links=4, seed=0):
    """Community-structured heterogeneous graph.

    Users and items belong to groups; users mostly consume and befriend inside
    their group, and the item-item relation links items of the same group.
    Returns raw 1-based edge lists: (user_item, user_user, item_item).
    """
    rng = np.random.default_rng(seed)
    ug = rng.integers(0, n_groups, n_users)
    ig = np.arange(n_items) % n_groups
    by_group = [np.flatnonzero(ig == g) for g in range(n_groups)]
    users_by_group = [np.flatnonzero(ug == g) for g in range(n_groups)]
    # mild popularity skew inside each group
    pop = rng.pareto(2.0, n_items) + 1.0

    ui = set()
    for u in range(n_users):
        own = by_group[ug[u]]
        k_in = rng.binomial(per_user, in_group)
        p = pop[own] / pop[own].sum()
        for v in rng.choice(own, size=min(k_in, len(own)), replace=False, p=p):
            ui.add((u, int(v)))
        others = np.flatnonzero(ig != ug[u])
        for v in rng.choice(others, size=per_user - k_in, replace=False):
            ui.add((u, int(v)))
    uu = set()
    for u in range(n_users):
        peers = users_by_group[ug[u]]
        peers = peers[peers != u]
        if len(peers) == 0:
            continue
        for f in rng.choice(peers, size=min(friends, len(peers)), replace=False):
            a, b = sorted((u, int(f)))
            uu.add((a, b))
    ii = set()
    for v in range(n_items):
        peers = by_group[ig[v]]
        peers = peers[peers != v]
        for w in rng.choice(peers, size=min(item_links, len(peers)), replace=False):
            ii.add((v, int(w)))

    def one_based(edges):
        return sorted((a + 1, b + 1) for a, b in edges)

    return one_based(ui), one_based(uu), one_based(ii)


def write_planted(directory, seed=0, ratings=False, **kw) -> Path:
    """Write a planted dataset laid out like the music data (user/artist files)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ui, uu, ii = planted_hin(seed=seed, **kw)
    rng = np.random.default_rng(seed + 1)
    _write_edges(d / "user_artist.dat", ui, rng.integers(1, 500, len(ui)) if ratings else None)
    _write_edges(d / "user_user.dat", uu)
    _write_edges(d / "artist_artist.dat", ii)
    write_kv(d / "schema.conf", {
        "user_type": "U",
        "item_type": "A",
        "user_item": "user_artist",
        "relation.user_artist": "user_artist.dat U A",
        "relation.user_user": "user_user.dat U U symmetric",
        "relation.artist_artist": "artist_artist.dat A A",
        "meta_path": "U-U-A",
    })
    return d / "schema.conf"


def planted_graph(seed=0, **kw):
    """``planted_hin`` as an in-memory graph (types U, A; relations user_artist, user_user, artist_artist)."""
    from .hetgraph import HeteroGraph, Relation
    from .sparse import SparseMatrix

    n_users, n_items = kw.get("n_users", 200), kw.get("n_items", 300)
    ui, uu, ii = planted_hin(seed=seed, **kw)

    def mat(edges, shape, symmetric=False):
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) - 1
        r, c = e[:, 0], e[:, 1]
        if symmetric:
            r, c = np.concatenate([r, c]), np.concatenate([c, r])
        return SparseMatrix.from_coo(r, c, 1.0, shape, binary=True)

    rels = {
        "user_artist": Relation("user_artist", "U", "A", mat(ui, (n_users, n_items))),
        "user_user": Relation("user_user", "U", "U", mat(uu, (n_users, n_users), symmetric=True)),
        "artist_artist": Relation("artist_artist", "A", "A", mat(ii, (n_items, n_items))),
    }
    return HeteroGraph({"U": n_users, "A": n_items}, rels, "U", "A", "user_artist")
