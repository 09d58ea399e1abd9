"""Joint training: user batches, dropout, Adam, early stopping on validation Recall@20."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import NonFiniteError
from .evaluation import evaluate
from .hetgraph import HeteroGraph, InteractionSplit, pairs_to_matrix
from .metapath import LinkScoreMatrix, commuting_matrix, link_score, parse_metapath
from .model import PARAM_NAMES, DualModel, init_params
from .objectives import LossWeights, PairSampler, loss_total
from .seeding import rng_for
from .sparse import SparseMatrix

log = logging.getLogger(__name__)

VARIANTS = ("DUAL", "DUAL-C", "DUAL-PC")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    dropout: float = 0.3
    patience: int = 20
    batch_size: int = 512
    layers: int = 2
    d: int = 256
    seed: int = 0
    meta_path: str = "U-U-A"
    max_epochs: int = 500
    c_plus: float = 1.0
    c_minus: float = 0.15
    lambda_pre: float = 0.3
    lambda_con: float = 5e-4
    tau: float = 0.2
    theta_neg: float = 0.0
    n_neg: int = 64
    encoder: str = "light"
    gate_input: str = "E_S"
    dropout_site: str = "fused"
    head_init: float = 1.0
    linkscore_source: str = "train"
    eval_k: int = 20

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dropout_site not in ("fused", "initial"):
            raise ValueError("dropout_site must be 'fused' or 'initial'")
        if self.linkscore_source not in ("train", "full"):
            raise ValueError("linkscore_source must be 'train' or 'full'")
        if self.batch_size < 1 or self.d < 1 or self.layers < 1:
            raise ValueError("batch_size, d and layers must be positive")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.c_plus, self.c_minus, self.lambda_pre, self.lambda_con, self.tau, self.theta_neg)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, kv: dict) -> "TrainConfig":
        from .config import coerce

        defaults = cls()
        known = {f.name for f in fields(cls)}
        vals = {k: coerce(str(v), getattr(defaults, k)) for k, v in kv.items() if k in known}
        return cls(**vals)


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant == "DUAL":
        return cfg
    if variant == "DUAL-C":
        return replace(cfg, lambda_con=0.0)
    if variant == "DUAL-PC":
        # the contrastive task rides on the predictive one, so both go
        return replace(cfg, lambda_pre=0.0, lambda_con=0.0)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


class Adam:
    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr:
                params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, state: dict):
        self.t = int(state["t"])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


def dropout_mask(rng: np.random.Generator, shape, rate: float):
    """Inverted dropout: kept entries scaled by 1/(1-rate), so E[mask] = 1."""
    if rate == 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


@dataclass
class DualData:
    """Everything training needs, derived once from a graph and its split."""
    split: InteractionSplit
    link: LinkScoreMatrix
    g_phi: SparseMatrix
    valid: SparseMatrix
    test: SparseMatrix

    @property
    def r(self) -> SparseMatrix:
        return self.split.train

    @property
    def n_users(self):
        return self.split.n_users

    @property
    def n_items(self):
        return self.split.n_items

    def train_valid(self) -> SparseMatrix:
        return SparseMatrix.from_scipy(((self.r.to_scipy() + self.valid.to_scipy()) > 0).astype(np.float64))


def prepare_data(g: HeteroGraph, split: InteractionSplit, meta_path: str, linkscore_source="train") -> DualData:
    """Build M (row-max normalized commuting matrix) and G_Φ = {(u,v): M_uv > 0}.

    With ``linkscore_source="train"`` the user-item legs of the meta-path only
    see training interactions, so held-out pairs cannot leak into M.
    """
    source = g.with_interactions(split.train) if linkscore_source == "train" else g
    path = parse_metapath(source, meta_path)
    link = link_score(commuting_matrix(source, path), path)
    shape = split.train.shape
    return DualData(split, link, link.scores.binarize(),
                    pairs_to_matrix(split.valid, shape), pairs_to_matrix(split.test, shape))


@dataclass
class EpochStats:
    epoch: int
    loss_rec: float
    loss_pre: float
    loss_con: float
    skipped_anchors: int = 0
    seconds: float = 0.0


@dataclass
class TrainState:
    params: dict
    optimizer: Adam
    epoch: int = 0
    best_params: dict | None = None
    best_metric: float = -np.inf
    best_epoch: int = -1
    stale: int = 0
    history: list = field(default_factory=list)


def new_state(model: DualModel, cfg: TrainConfig) -> TrainState:
    params = init_params(model.n_nodes, cfg.d, cfg.seed, head_init=cfg.head_init)
    return TrainState(params, Adam(cfg.learning_rate))


def build_model(data: DualData, cfg: TrainConfig) -> DualModel:
    return DualModel(data.r, data.g_phi, cfg.layers, cfg.encoder, cfg.gate_input)


def batch_loss_and_grads(model: DualModel, params: dict, batch, data: DualData, w: LossWeights,
                         masks=None, pairs=None, dropout_site="fused"):
    """Loss of one user batch and its gradient for every parameter."""
    masks = masks or {}
    used = params
    if dropout_site == "initial" and masks:
        used = dict(params)
        for name in ("E_S", "E_T"):
            if masks.get(name) is not None:
                used[name] = params[name] * masks[name]
    fwd = model.forward(used)
    z = dict(fwd.z)
    if dropout_site == "fused":
        for task in ("rec", "pre"):
            if masks.get(task) is not None:
                z[task] = z[task] * masks[task]
    tl = loss_total(z["rec"], z["pre"], params["h_rec"], params["h_pre"], batch, data.r, data.link, w, pairs)
    dz = {"rec": tl.grad_z_rec, "pre": tl.grad_z_pre}
    if dropout_site == "fused":
        for task in ("rec", "pre"):
            if masks.get(task) is not None:
                dz[task] = dz[task] * masks[task]
    grads = model.backward(used, fwd, dz)
    if dropout_site == "initial":
        for name in ("E_S", "E_T"):
            if masks.get(name) is not None:
                grads[name] = grads[name] * masks[name]
    grads["h_rec"] = tl.grad_h_rec
    grads["h_pre"] = tl.grad_h_pre
    return tl, grads


def _dump_batch(dump_dir, epoch, batch, tl, params):
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"nonfinite_epoch{epoch}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, batch=np.asarray(batch), loss=np.array([tl.rec, tl.pre, tl.con]), **params)
    return path


def train_epoch(model: DualModel, state: TrainState, data: DualData, cfg: TrainConfig,
                sampler: PairSampler | None = None, dump_dir=None) -> EpochStats:
    t0 = time.perf_counter()
    epoch = state.epoch
    w = cfg.weights
    if sampler is None and w.lambda_con > 0:
        sampler = PairSampler(data.link, data.r, w.theta_neg, cfg.n_neg)
    order = rng_for(cfg.seed, "shuffle", epoch).permutation(data.n_users)
    drop_rng = rng_for(cfg.seed, "dropout", epoch)
    neg_rng = rng_for(cfg.seed, "negatives", epoch)
    n_nodes = model.n_nodes
    sums = np.zeros(3)
    skipped = 0
    n_batches = 0
    for lo in range(0, len(order), cfg.batch_size):
        batch = np.sort(order[lo:lo + cfg.batch_size])
        shape = (n_nodes, cfg.d)
        if cfg.dropout_site == "fused":
            masks = {"rec": dropout_mask(drop_rng, shape, cfg.dropout), "pre": dropout_mask(drop_rng, shape, cfg.dropout)}
        else:
            masks = {"E_S": dropout_mask(drop_rng, shape, cfg.dropout), "E_T": dropout_mask(drop_rng, shape, cfg.dropout)}
        pairs = sampler.sample(batch, neg_rng) if (sampler is not None and w.lambda_con > 0) else None
        tl, grads = batch_loss_and_grads(model, state.params, batch, data, w, masks, pairs, cfg.dropout_site)
        if not np.isfinite(tl.value):
            path = _dump_batch(dump_dir, epoch, batch, tl, state.params)
            raise NonFiniteError(
                f"non-finite loss at epoch {epoch}: rec={tl.rec} pre={tl.pre} con={tl.con}; "
                f"batch users {batch[:10].tolist()}{'...' if len(batch) > 10 else ''}"
                + (f"; dumped to {path}" if path else ""))
        state.optimizer.step(state.params, grads)
        sums += (tl.rec, tl.pre, tl.con)
        skipped += pairs.skipped if pairs is not None else 0
        n_batches += 1
    means = sums / max(n_batches, 1)
    return EpochStats(epoch, *means, skipped_anchors=skipped, seconds=time.perf_counter() - t0)


def validate(model: DualModel, params: dict, data: DualData, k: int = 20) -> tuple:
    z = model.forward(params).z["rec"]
    m = evaluate(z, params["h_rec"], data.n_users, data.r, data.valid, ks=(k,))
    return m[("recall", k)], m[("ndcg", k)]


def fit(model: DualModel, state: TrainState, data: DualData, cfg: TrainConfig, max_epochs=None,
        validate_fn=None, on_epoch=None, dump_dir=None) -> TrainState:
    """Train until validation Recall@20 stops improving for ``patience`` epochs.

    ``state.best_params`` holds the best-validation checkpoint on return.
    """
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    validate_fn = validate_fn or (lambda params: validate(model, params, data, cfg.eval_k))
    sampler = PairSampler(data.link, data.r, cfg.theta_neg, cfg.n_neg) if cfg.lambda_con > 0 else None
    if state.best_params is None:
        state.best_params = {k: v.copy() for k, v in state.params.items()}
    while state.epoch < max_epochs:
        stats = train_epoch(model, state, data, cfg, sampler, dump_dir)
        recall, ndcg = validate_fn(state.params)
        state.history.append({
            "epoch": state.epoch, "loss_rec": stats.loss_rec, "loss_pre": stats.loss_pre,
            "loss_con": stats.loss_con, "val_recall20": recall, "val_ndcg20": ndcg,
        })
        log.info("epoch %d  rec %.4f  pre %.4f  con %.4f  val R@%d %.4f  N@%d %.4f  (%.1fs)",
                 state.epoch, stats.loss_rec, stats.loss_pre, stats.loss_con,
                 cfg.eval_k, recall, cfg.eval_k, ndcg, stats.seconds)
        if recall > state.best_metric:
            state.best_metric = recall
            state.best_epoch = state.epoch
            state.best_params = {k: v.copy() for k, v in state.params.items()}
            state.stale = 0
        else:
            state.stale += 1
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state)
        if state.stale >= max(cfg.patience, 1):
            log.info("early stop at epoch %d (best %d)", state.epoch - 1, state.best_epoch)
            break
    return state


HISTORY_FIELDS = ("epoch", "loss_rec", "loss_pre", "loss_con", "val_recall20", "val_ndcg20")


def history_csv(history) -> str:
    lines = [",".join(HISTORY_FIELDS)]
    for row in history:
        lines.append(",".join(str(row["epoch"]) if f == "epoch" else f"{row[f]:.6f}" for f in HISTORY_FIELDS))
    return "\n".join(lines) + "\n"


def evaluate_test(model: DualModel, params: dict, data: DualData, ks=(5, 10, 15, 20)) -> dict:
    """Test-set metrics; train and validation positives are excluded from ranking."""
    z = model.forward(params).z["rec"]
    return evaluate(z, params["h_rec"], data.n_users, data.train_valid(), data.test, ks)


def run_ablation(variant: str, data: DualData, cfg: TrainConfig, max_epochs=None) -> dict:
    vcfg = variant_config(cfg, variant)
    model = build_model(data, vcfg)
    state = fit(model, new_state(model, vcfg), data, vcfg, max_epochs=max_epochs)
    return evaluate_test(model, state.best_params, data)


__all__ = [
    "Adam", "DualData", "EpochStats", "PARAM_NAMES", "TrainConfig", "TrainState", "VARIANTS",
    "batch_loss_and_grads", "build_model", "dropout_mask", "fit", "history_csv", "new_state",
    "prepare_data", "run_ablation", "evaluate_test", "train_epoch", "validate", "variant_config",
]
