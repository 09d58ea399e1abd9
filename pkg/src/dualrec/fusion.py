"""Customized-gate fusion of shared and task-specific experts."""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteError

TASKS = ("rec", "pre")
# expert keys: (embedding table, graph)
EXPERT_KEYS = (("S", "UI"), ("S", "PHI"), ("T", "UI"), ("T", "PHI"))


def expert_keys(task: str) -> list:
    """Task-specific expert first, then the two shared ones."""
    if task == "rec":
        return [("T", "UI"), ("S", "UI"), ("S", "PHI")]
    if task == "pre":
        return [("T", "PHI"), ("S", "UI"), ("S", "PHI")]
    raise ValueError(f"unknown task {task!r}")


def select_experts(task: str, experts: dict) -> list:
    return [experts[k] for k in expert_keys(task)]


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def gate_weights(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-node softmax(W x_i); ``w`` is (n_experts, d), ``x`` is (nodes, d)."""
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(x))):
        raise NonFiniteError("gate input or parameters are not finite")
    return softmax_rows(x @ w.T)


def fuse(experts: list, weights: np.ndarray) -> np.ndarray:
    out = weights[:, 0:1] * experts[0]
    for j in range(1, len(experts)):
        out += weights[:, j:j + 1] * experts[j]
    return out


def fuse_backward(experts: list, weights: np.ndarray, dz: np.ndarray):
    """Gradients of ``fuse`` w.r.t. each expert and the weight matrix."""
    d_experts = [weights[:, j:j + 1] * dz for j in range(len(experts))]
    d_weights = np.stack([np.einsum("ij,ij->i", dz, e) for e in experts], axis=1)
    return d_experts, d_weights


def gate_backward(w: np.ndarray, x: np.ndarray, weights: np.ndarray, d_weights: np.ndarray):
    """Back through softmax(x Wᵀ): returns (dW, dx)."""
    d_logits = weights * (d_weights - np.sum(weights * d_weights, axis=1, keepdims=True))
    return d_logits.T @ x, d_logits @ w
