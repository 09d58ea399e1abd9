"""Graph bundles and training checkpoints on disk."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .hetgraph import HeteroGraph, InteractionSplit, Relation
from .sparse import SparseMatrix
from .trainer import Adam, TrainConfig, TrainState


@dataclass
class Bundle:
    graph: HeteroGraph
    split: InteractionSplit
    meta: dict


def _put_binary(sections, prefix, m: SparseMatrix):
    sections[f"{prefix}.row_offsets"] = m.row_offsets
    sections[f"{prefix}.col_indices"] = m.col_indices


def _get_binary(sections, prefix, shape) -> SparseMatrix:
    ci = sections[f"{prefix}.col_indices"]
    return SparseMatrix(shape[0], shape[1], sections[f"{prefix}.row_offsets"], ci, np.ones(len(ci)))


def save_bundle(path, graph: HeteroGraph, split: InteractionSplit, meta: dict) -> str:
    head = dict(meta)
    head.update({
        "user_type": graph.user_type,
        "item_type": graph.item_type,
        "user_item": graph.user_item,
        "node_counts": graph.node_counts,
        "relations": [[r.name, r.src, r.dst] for r in graph.relations.values()],
    })
    sections = {"meta": head}
    for t in sorted(graph.node_ids):
        sections[f"ids.{t}"] = np.asarray(graph.node_ids[t], dtype=np.int64)
    for r in graph.relations.values():
        _put_binary(sections, f"rel.{r.name}", r.matrix)
    _put_binary(sections, "split.train", split.train)
    sections["split.valid"] = split.valid.astype(np.int64)
    sections["split.test"] = split.test.astype(np.int64)
    return container.write(path, container.BUNDLE_MAGIC, sections)


def load_bundle(path) -> Bundle:
    s = container.read(path, container.BUNDLE_MAGIC)
    meta = s["meta"]
    counts = meta["node_counts"]
    rels = {}
    for name, src, dst in meta["relations"]:
        rels[name] = Relation(name, src, dst, _get_binary(s, f"rel.{name}", (counts[src], counts[dst])))
    ids = {k[4:]: v for k, v in s.items() if k.startswith("ids.")}
    g = HeteroGraph(counts, rels, meta["user_type"], meta["item_type"], meta["user_item"], ids)
    train = _get_binary(s, "split.train", (g.n_users, g.n_items))
    split = InteractionSplit(train, s["split.valid"].reshape(-1, 2), s["split.test"].reshape(-1, 2))
    return Bundle(g, split, meta)


def save_checkpoint(path, state: TrainState, cfg: TrainConfig, extra: dict | None = None) -> str:
    meta = {
        "config": cfg.as_dict(),
        "epoch": state.epoch,
        "best_epoch": state.best_epoch,
        "best_metric": None if not np.isfinite(state.best_metric) else float(state.best_metric),
        "stale": state.stale,
        "history": state.history,
        "optimizer": {"lr": state.optimizer.lr, "beta1": state.optimizer.beta1,
                      "beta2": state.optimizer.beta2, "eps": state.optimizer.eps},
    }
    meta.update(extra or {})
    sections = {"meta": meta}
    best = state.best_params if state.best_params is not None else state.params
    for name in sorted(state.params):
        sections[f"param.{name}"] = state.params[name]
    for name in sorted(best):
        sections[f"best.{name}"] = best[name]
    for key, value in state.optimizer.state().items():
        sections[f"opt.{key}"] = np.asarray(value)
    return container.write(path, container.CHECKPOINT_MAGIC, sections)


def load_checkpoint(path):
    """Returns (TrainState, TrainConfig, meta)."""
    s = container.read(path, container.CHECKPOINT_MAGIC)
    meta = s["meta"]
    cfg = TrainConfig(**meta["config"])
    params = {k[6:]: np.array(v) for k, v in s.items() if k.startswith("param.")}
    best = {k[5:]: np.array(v) for k, v in s.items() if k.startswith("best.")}
    o = meta["optimizer"]
    opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"])
    opt.load_state({k[4:]: v for k, v in s.items() if k.startswith("opt.")})
    best_metric = meta["best_metric"] if meta["best_metric"] is not None else -np.inf
    state = TrainState(params, opt, meta["epoch"], best, best_metric, meta["best_epoch"], meta["stale"],
                       list(meta["history"]))
    return state, cfg, meta
