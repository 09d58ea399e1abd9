import struct

import numpy as np
import pytest

from dualrec import artifacts, container
from dualrec.hetgraph import split_interactions
from dualrec.synthetic import planted_graph
from dualrec.trainer import TrainConfig, build_model, fit, new_state, prepare_data


def test_roundtrip_and_layout(tmp_path):
    sections = {"meta": {"a": 1, "b": [1, 2]}, "x": np.arange(6, dtype=np.int64).reshape(2, 3),
                "y": np.array([0.5, -1.25])}
    data = container.encode(container.BUNDLE_MAGIC, sections)
    assert data[:8] == b"DUALBNDL"
    assert struct.unpack_from("<II", data, 8) == (container.VERSION, 3)
    (name_len,) = struct.unpack_from("<H", data, 16)
    assert data[18:18 + name_len] == b"meta"
    out = container.decode(data, container.BUNDLE_MAGIC)
    assert out["meta"] == sections["meta"]
    np.testing.assert_array_equal(out["x"], sections["x"])
    assert out["x"].dtype == np.int64
    assert container.encode(container.BUNDLE_MAGIC, sections) == data


def test_rejects_bad_input(tmp_path):
    data = container.encode(container.BUNDLE_MAGIC, {"x": np.zeros(3)})
    with pytest.raises(container.ContainerError, match="magic"):
        container.decode(data, container.CHECKPOINT_MAGIC)
    bumped = data[:8] + struct.pack("<I", 99) + data[12:]
    with pytest.raises(container.ContainerError, match="version"):
        container.decode(bumped, container.BUNDLE_MAGIC)
    with pytest.raises(container.ContainerError):
        container.decode(data[:-5], container.BUNDLE_MAGIC)
    with pytest.raises(FileNotFoundError):
        container.read(tmp_path / "missing", container.BUNDLE_MAGIC)


def test_bundle_and_checkpoint_roundtrip(tmp_path):
    g = planted_graph(seed=1, n_users=20, n_items=30, n_groups=3, per_user=6, friends=3, item_links=3)
    split = split_interactions(g, 0)
    h1 = artifacts.save_bundle(tmp_path / "b", g, split, {"seed": 0})
    b = artifacts.load_bundle(tmp_path / "b")
    assert b.graph.node_counts == g.node_counts
    for name in g.relations:
        assert b.graph.relations[name].matrix.same_as(g.relations[name].matrix)
    assert b.split.train.same_as(split.train)
    np.testing.assert_array_equal(b.split.test, split.test)
    assert artifacts.save_bundle(tmp_path / "b2", b.graph, b.split, {"seed": 0}) == h1

    cfg = TrainConfig(d=8, max_epochs=2, batch_size=10)
    data = prepare_data(g, split, "U-U-A")
    model = build_model(data, cfg)
    state = fit(model, new_state(model, cfg), data, cfg)
    artifacts.save_checkpoint(tmp_path / "c", state, cfg)
    st, cfg2, meta = artifacts.load_checkpoint(tmp_path / "c")
    assert cfg2 == cfg and st.epoch == state.epoch and st.history == state.history
    for k in state.params:
        np.testing.assert_array_equal(st.params[k], state.params[k])
        np.testing.assert_array_equal(st.best_params[k], state.best_params[k])
    assert st.optimizer.t == state.optimizer.t
