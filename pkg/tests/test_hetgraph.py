import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualrec.config import write_kv
from dualrec.errors import ConfigError, EmptyDatasetError, ParseError
from dualrec.hetgraph import (HeteroGraph, Relation, Schema, build_ui_graph, filter_min_interactions,
                              load_relations, split_interactions, subsample_users)
from dualrec.sparse import SparseMatrix
from dualrec.synthetic import TOY_WATCHED


def _graph_from_dense(r, extra=None):
    rels = {"ui": Relation("ui", "U", "I", SparseMatrix.from_dense(r))}
    n_u, n_i = r.shape
    uu = extra if extra is not None else np.zeros((n_u, n_u))
    rels["uu"] = Relation("uu", "U", "U", SparseMatrix.from_dense(uu))
    return HeteroGraph({"U": n_u, "I": n_i}, rels, "U", "I", "ui")


def _write_dataset(d, files, schema):
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text, encoding="utf-8")
    write_kv(d / "schema.conf", schema)
    return Schema.from_file(d / "schema.conf")


BASIC_SCHEMA = {
    "user_type": "U", "item_type": "I", "user_item": "ui",
    "relation.ui": "ui.dat U I", "relation.uu": "uu.dat U U",
}


def test_toy_adjacency_matches_watch_list(toy_graph):
    r = toy_graph.interactions.to_dense()
    expect = np.zeros((4, 3))
    for u, m in TOY_WATCHED:
        expect[u - 1, m - 1] = 1
    np.testing.assert_array_equal(r, expect)
    # u2 has two friends (u1, u3) who watched m1
    friends = toy_graph.relations["user_user"].matrix.to_dense()[1]
    assert (friends @ r)[0] == 2
    split = split_interactions(toy_graph, 0, fractions=(1.0, 0.0))
    np.testing.assert_array_equal(build_ui_graph(split).to_dense(), expect)


def test_load_reindexes_and_binarizes(tmp_path):
    schema = _write_dataset(tmp_path / "d", {
        "ui.dat": "10 7 3.5\n10 7 1\n30 9 4\n",
        "uu.dat": "10\t30\n",
    }, BASIC_SCHEMA)
    g = load_relations(tmp_path / "d", schema)
    assert g.node_counts == {"U": 2, "I": 2}
    np.testing.assert_array_equal(g.node_ids["U"], [10, 30])
    np.testing.assert_array_equal(g.interactions.to_dense(), [[1, 0], [0, 1]])
    assert g.relations["uu"].matrix.nnz == 1


def test_empty_relation_file(tmp_path):
    schema = _write_dataset(tmp_path / "d", {"ui.dat": "1 1\n2 1\n", "uu.dat": ""}, BASIC_SCHEMA)
    g = load_relations(tmp_path / "d", schema)
    assert g.relations["uu"].matrix.nnz == 0
    assert g.relations["uu"].matrix.shape == (2, 2)


def test_malformed_line_reports_line_number(tmp_path):
    schema = _write_dataset(tmp_path / "d", {"ui.dat": "1 1\n2 x\n", "uu.dat": ""}, BASIC_SCHEMA)
    with pytest.raises(ParseError, match=r"ui\.dat:2"):
        load_relations(tmp_path / "d", schema)
    schema = _write_dataset(tmp_path / "e", {"ui.dat": "1 1\n\n1 2 3 4\n", "uu.dat": ""}, BASIC_SCHEMA)
    with pytest.raises(ParseError, match=r":3:"):
        load_relations(tmp_path / "e", schema)


def test_union_id_universe(tmp_path):
    # user 5 appears only in the social file; it still gets an index (with an empty interaction row)
    schema = _write_dataset(tmp_path / "d", {"ui.dat": "1 1\n2 1\n", "uu.dat": "1 5\n"}, BASIC_SCHEMA)
    g = load_relations(tmp_path / "d", schema)
    assert g.n_users == 3
    assert g.interactions.row_nnz().tolist() == [1, 1, 0]


def test_schema_validation():
    with pytest.raises(ConfigError):
        Schema.from_mapping({"user_type": "U", "item_type": "I", "user_item": "nope", "relation.ui": "f U I"})
    with pytest.raises(ConfigError):
        Schema.from_mapping({"user_type": "U", "item_type": "I", "user_item": "ui", "relation.ui": "f I U"})
    with pytest.raises(ConfigError):
        Schema.from_mapping({"user_type": "U", "item_type": "I", "user_item": "ui", "relation.ui": "f U"})


def test_graph_needs_more_than_two_types():
    r = SparseMatrix.from_dense(np.ones((2, 2)))
    with pytest.raises(ConfigError):
        HeteroGraph({"U": 2}, {"uu": Relation("uu", "U", "U", r)}, "U", "U", "uu")


def test_filter_all_degrees_high_is_identity():
    r = np.ones((6, 7))
    g = filter_min_interactions(_graph_from_dense(r), 5)
    np.testing.assert_array_equal(g.interactions.to_dense(), r)


def test_filter_removes_low_user():
    r = np.ones((7, 6))
    r[3, :2] = 0  # user 3 keeps 4 interactions
    uu = np.zeros((7, 7))
    uu[3, 0] = uu[0, 3] = uu[1, 2] = 1
    g = filter_min_interactions(_graph_from_dense(r, uu), 5)
    assert g.n_users == 6
    assert g.interactions.nnz == 36
    # the friendship edges touching user 3 are gone, the other one is re-indexed
    np.testing.assert_array_equal(np.argwhere(g.relations["uu"].matrix.to_dense()), [[1, 2]])


def test_filter_empty_raises():
    with pytest.raises(EmptyDatasetError):
        filter_min_interactions(_graph_from_dense(np.eye(4)), 5)


def _single_pass_oracle(r, k):
    users = [u for u in range(r.shape[0]) if r[u].sum() >= k]
    items = [v for v in range(r.shape[1]) if r[:, v].sum() >= k]
    return users, items


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_filter_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    r = (rng.random((15, 12)) < rng.uniform(0.2, 0.8)).astype(float)
    users, items = _single_pass_oracle(r, k)
    g = _graph_from_dense(r)
    if not users or not items:
        with pytest.raises(EmptyDatasetError):
            filter_min_interactions(g, k)
        return
    out = filter_min_interactions(g, k)
    np.testing.assert_array_equal(out.interactions.to_dense(), r[np.ix_(users, items)])
    # re-indexing is a bijection on the surviving edges
    np.testing.assert_array_equal(out.node_ids["U"], users)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_kcore_every_survivor_has_k(seed, k):
    rng = np.random.default_rng(seed)
    r = (rng.random((20, 15)) < 0.4).astype(float)
    try:
        out = filter_min_interactions(_graph_from_dense(r), k, iterate=True)
    except EmptyDatasetError:
        return
    d = out.interactions.to_dense()
    assert d.sum(1).min() >= k and d.sum(0).min() >= k


def test_split_counts_and_disjoint():
    rng = np.random.default_rng(0)
    for n_pos in (10, 37, 101):
        r = np.zeros((20, 30))
        flat = rng.choice(600, n_pos, replace=False)
        r.flat[flat] = 1
        g = _graph_from_dense(r)
        s = split_interactions(g, seed=3)
        assert s.train.nnz == (8 * n_pos) // 10
        assert len(s.valid) == n_pos // 10
        assert len(s.test) == n_pos - s.train.nnz - len(s.valid)
        train = {tuple(x) for x in np.argwhere(s.train.to_dense())}
        valid, test = {tuple(x) for x in s.valid}, {tuple(x) for x in s.test}
        assert not (train & valid) and not (train & test) and not (valid & test)
        assert train | valid | test == {tuple(x) for x in np.argwhere(r)}
        assert not s.train.contains(s.test[:, 0], s.test[:, 1]).any()


def test_split_ten_and_determinism():
    r = np.zeros((5, 5))
    r.flat[:10] = 1
    g = _graph_from_dense(r)
    a, b = split_interactions(g, 7), split_interactions(g, 7)
    assert (a.train.nnz, len(a.valid), len(a.test)) == (8, 1, 1)
    assert a.train.same_as(b.train)
    np.testing.assert_array_equal(a.test, b.test)


def test_empty_train_row_in_ui_graph():
    r = np.ones((3, 4))
    r[2] = 0
    s = split_interactions(_graph_from_dense(r), 0, fractions=(1.0, 0.0))
    assert build_ui_graph(s).row_nnz()[2] == 0


def test_subsample_users():
    r = np.ones((50, 4))
    g = subsample_users(_graph_from_dense(r), 0.1, seed=1)
    assert g.n_users == 5
    assert subsample_users(_graph_from_dense(r), 0.1, seed=1).node_ids["U"].tolist() == g.node_ids["U"].tolist()
