"""Forward and backward passes of the full model: four experts, two gates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import make_encoder
from .fusion import EXPERT_KEYS, TASKS, expert_keys, fuse, fuse_backward, gate_backward, gate_weights
from .seeding import rng_for
from .sparse import SparseMatrix

PARAM_NAMES = ("E_S", "E_T", "W_rec", "W_pre", "h_rec", "h_pre")


def init_params(n_nodes: int, d: int, seed: int, n_experts: int = 3, head_init: float = 1.0) -> dict:
    """Embeddings and gates i.i.d. N(0, 1/d); heads ``head_init`` plus N(0, 1/d) noise."""
    rng = rng_for(seed, "init")
    scale = 1.0 / np.sqrt(d)
    return {
        "E_S": rng.normal(0.0, scale, (n_nodes, d)),
        "E_T": rng.normal(0.0, scale, (n_nodes, d)),
        "W_rec": rng.normal(0.0, scale, (n_experts, d)),
        "W_pre": rng.normal(0.0, scale, (n_experts, d)),
        "h_rec": head_init + rng.normal(0.0, scale, d),
        "h_pre": head_init + rng.normal(0.0, scale, d),
    }


@dataclass
class Forward:
    experts: dict
    gates: dict
    z: dict


class DualModel:
    def __init__(self, g_ui: SparseMatrix, g_phi: SparseMatrix, layers: int = 2,
                 encoder: str = "light", gate_input: str = "E_S"):
        if g_ui.shape != g_phi.shape:
            raise ValueError(f"graphs disagree on shape: {g_ui.shape} vs {g_phi.shape}")
        if gate_input not in ("E_S", "E_T"):
            raise ValueError("gate_input must be E_S or E_T")
        self.n_users, self.n_items = g_ui.shape
        self.encoders = {"UI": make_encoder(encoder, g_ui, layers), "PHI": make_encoder(encoder, g_phi, layers)}
        self.gate_input = gate_input

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    def forward(self, params: dict) -> Forward:
        experts = {}
        d = params["E_S"].shape[1]
        both = np.hstack([params["E_S"], params["E_T"]])
        for g, enc in self.encoders.items():
            # one product per graph for both tables
            z = enc.forward(both)
            experts[("S", g)], experts[("T", g)] = z[:, :d], z[:, d:]
        experts = {k: experts[k] for k in EXPERT_KEYS}
        x = params[self.gate_input]
        gates, z = {}, {}
        for task in TASKS:
            gates[task] = gate_weights(params[f"W_{task}"], x)
            z[task] = fuse([experts[k] for k in expert_keys(task)], gates[task])
        return Forward(experts, gates, z)

    def backward(self, params: dict, fwd: Forward, dz: dict) -> dict:
        """Gradients of a loss w.r.t. the embedding tables and gates, given dL/dZ^k."""
        d_experts = {k: np.zeros_like(v) for k, v in fwd.experts.items()}
        grads = {"E_S": np.zeros_like(params["E_S"]), "E_T": np.zeros_like(params["E_T"])}
        x = params[self.gate_input]
        for task in TASKS:
            keys = expert_keys(task)
            de, dw = fuse_backward([fwd.experts[k] for k in keys], fwd.gates[task], dz[task])
            for k, g in zip(keys, de):
                d_experts[k] += g
            d_wk, d_x = gate_backward(params[f"W_{task}"], x, fwd.gates[task], dw)
            grads[f"W_{task}"] = d_wk
            grads[self.gate_input] += d_x
        d = params["E_S"].shape[1]
        for g, enc in self.encoders.items():
            back = enc.backward(np.hstack([d_experts[("S", g)], d_experts[("T", g)]]))
            grads["E_S"] += back[:, :d]
            grads["E_T"] += back[:, d:]
        return grads
