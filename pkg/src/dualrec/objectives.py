"""Scoring heads and the three training losses with analytic gradients.

Representations are full node tables: rows ``0..m-1`` are users, ``m..`` items.
Every loss returns a :class:`LossResult` whose ``grad_*`` fields are gradients
with respect to the inputs it was given.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .metapath import LinkScoreMatrix
from .sparse import SparseMatrix, transpose


@dataclass
class LossWeights:
    c_plus: float = 1.0
    c_minus: float = 0.15
    lambda_pre: float = 0.3
    lambda_con: float = 5e-4
    tau: float = 0.2
    theta_neg: float = 0.0

    def __post_init__(self):
        if self.c_plus < 0 or self.c_minus < 0 or self.lambda_pre < 0 or self.lambda_con < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.theta_neg < 1.0:
            raise ValueError("theta_neg must lie in [0, 1)")


@dataclass
class LossResult:
    value: float
    grad_z: np.ndarray | None = None
    grad_h: np.ndarray | None = None


def score(z: np.ndarray, h: np.ndarray, n_users: int, u: int, v: int) -> float:
    """h·(p_u ⊙ q_v)."""
    if not (0 <= u < n_users and 0 <= v < z.shape[0] - n_users):
        raise IndexError(f"pair ({u}, {v}) out of range")
    return float(np.sum(h * z[u] * z[n_users + v]))


score_rec = score
score_pre = score


def _all_pairs_square(p, q, h, weight):
    """Σ_{u,v} weight·(h·(p_u⊙q_v))² via d×d Gram matrices, with its gradients."""
    a = p.T @ p
    b = weight * (q.T @ q)
    hh = np.outer(h, h)
    value = float(np.sum(a * b * hh))
    dp = 2.0 * p @ (b * hh)
    dq = 2.0 * weight * (q @ (a * hh))
    dh = 2.0 * (a * b) @ h
    return value, dp, dq, dh


def _scatter_add(idx, vals, n):
    """out[idx[k]] += vals[k] as a sparse product (deterministic, much faster than ufunc.at)."""
    s = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return s @ vals


def _weighted_pair_grads(p, q, h, lu, v, g):
    """Gradients of Σ_k g_k h·(p_{lu_k} ⊙ q_{v_k}) with respect to p, q and h, for fixed g."""
    gm = sp.csr_matrix((g, (lu, v)), shape=(p.shape[0], q.shape[0]))
    gq = gm @ q
    return (gq * h), gm.T @ (p * h), np.sum(p * gq, axis=0)


def _batch_rows(batch, n_users):
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("batch must not be empty")
    if len(np.unique(batch)) != len(batch):
        raise ValueError("batch users must be unique")
    if batch.min() < 0 or batch.max() >= n_users:
        raise IndexError("batch user out of range")
    return batch


def loss_rec(z: np.ndarray, h: np.ndarray, batch, r: SparseMatrix, w: LossWeights) -> LossResult:
    """Non-sampling weighted regression over all items for the batch users.

    Σ_{pos} ((c⁺-c⁻)R̂² - 2c⁺R̂) + Σ_{ij} (Σ_u p_ui p_uj)(Σ_v c⁻ q_vi q_vj) h_i h_j.
    Equals Σ_{u∈B, v} c_uv (r_uv - R̂_uv)² minus the constant c⁺·|positives|.
    """
    m = r.n_rows
    batch = _batch_rows(batch, m)
    p = z[batch]
    q = z[m:]
    rows = r.take_rows(batch)
    lu, v = rows.row_ids(), rows.col_indices

    r_hat = np.einsum("kd,kd->k", p[lu] * h, q[v])
    cp, cm = w.c_plus, w.c_minus
    value = float(np.sum((cp - cm) * r_hat ** 2 - 2.0 * cp * r_hat))
    g = 2.0 * (cp - cm) * r_hat - 2.0 * cp
    dp, dq, dh = _weighted_pair_grads(p, q, h, lu, v, g)

    v2, dp2, dq2, dh2 = _all_pairs_square(p, q, h, cm)
    value += v2
    dz = np.zeros_like(z)
    dz[batch] = dp + dp2
    dz[m:] = dq + dq2
    return LossResult(value, dz, dh + dh2)


def loss_pre(z: np.ndarray, h: np.ndarray, batch, m: LinkScoreMatrix | SparseMatrix) -> LossResult:
    """Σ_{u∈B} Σ_v (M_uv - M̂_uv)², summed over every item.

    Split as Σ_{stored}(M² - 2 M M̂) + Σ_all M̂²; the last sum uses the Gram trick.
    """
    scores = m.scores if isinstance(m, LinkScoreMatrix) else m
    n_users = scores.n_rows
    batch = _batch_rows(batch, n_users)
    p = z[batch]
    q = z[n_users:]
    rows = scores.take_rows(batch)
    lu, v, target = rows.row_ids(), rows.col_indices, rows.values

    # Σ_stored M·M̂ is linear in the scores, so it needs no per-pair products
    dp, dq, dh = _weighted_pair_grads(p, q, h, lu, v, -2.0 * target)
    value = float(np.sum(target ** 2) + np.sum(dp * p))

    v2, dp2, dq2, dh2 = _all_pairs_square(p, q, h, 1.0)
    value += v2
    dz = np.zeros_like(z)
    dz[batch] = dp + dp2
    dz[n_users:] = dq + dq2
    return LossResult(value, dz, dh + dh2)


@dataclass
class ContrastivePairs:
    anchors: np.ndarray      # (A,) node ids in the rec view
    pos_anchor: np.ndarray   # (P,) index into anchors
    pos_node: np.ndarray     # (P,) node ids in the pre view
    negatives: np.ndarray    # (A, n_neg) node ids in the pre view
    skipped: int = 0

    def positives_of(self, i):
        return self.pos_node[self.pos_anchor == i]


class PairSampler:
    """Link-score guided positive/negative selection across the two views.

    A user anchor's partners are items (rows of M); an item anchor's partners
    are users (rows of Mᵀ). Positives: the anchor itself plus partners with
    link-score exactly 1. Negatives: ``n_neg`` partners drawn uniformly, with
    replacement, among those with link-score ≤ ``theta_neg``.
    """

    def __init__(self, m: LinkScoreMatrix | SparseMatrix, r: SparseMatrix, theta_neg=0.0, n_neg=64):
        if n_neg < 1:
            raise ValueError("n_neg must be >= 1")
        self.m = m.scores if isinstance(m, LinkScoreMatrix) else m
        self.mt = transpose(self.m)
        self.r = r
        self.theta_neg = theta_neg
        self.n_neg = n_neg
        self.n_users, self.n_items = self.m.shape

    def anchors_for(self, batch):
        batch = np.asarray(batch, dtype=np.int64)
        items = np.unique(self.r.take_rows(batch).col_indices)
        return batch, items

    def _side(self, mat: SparseMatrix, rows, n_cand, offset_self, offset_partner, rng):
        sub = mat.take_rows(rows)
        rid, cols, vals = sub.row_ids(), sub.col_indices, sub.values
        # positives
        is_pos = vals == 1.0
        pos_a = rid[is_pos]
        pos_n = cols[is_pos] + offset_partner
        # negatives: uniform over the complement of {score > theta}
        excl = vals > self.theta_neg
        ex_rid, ex_cols = rid[excl], cols[excl]
        n_ex = np.bincount(ex_rid, minlength=len(rows))
        eligible = n_cand - n_ex
        ok = eligible > 0
        u = rng.random((len(rows), self.n_neg))
        rank = np.floor(u * eligible[:, None]).astype(np.int64)
        ex_ptr = np.concatenate([[0], np.cumsum(n_ex)])
        within = np.arange(len(ex_cols)) - ex_ptr[ex_rid]
        big = n_cand + 1
        keys = ex_cols - within + ex_rid * big
        probe = rank + (np.arange(len(rows)) * big)[:, None]
        shift = np.searchsorted(keys, probe.ravel(), side="right").reshape(probe.shape) - ex_ptr[:-1, None]
        negs = rank + shift + offset_partner
        anchors = np.asarray(rows, dtype=np.int64) + offset_self
        return anchors, pos_a, pos_n, negs, ok

    def sample(self, batch, rng) -> ContrastivePairs:
        users, items = self.anchors_for(batch)
        ua, upa, upn, uneg, uok = self._side(self.m, users, self.n_items, 0, self.n_users, rng)
        ia, ipa, ipn, ineg, iok = self._side(self.mt, items, self.n_users, self.n_users, 0, rng)

        anchors = np.concatenate([ua, ia])
        ok = np.concatenate([uok, iok])
        negs = np.concatenate([uneg, ineg]).reshape(len(anchors), self.n_neg)
        # self counterpart first, then score-1 partners
        pos_a = np.concatenate([np.arange(len(anchors)), upa, ipa + len(ua)])
        pos_n = np.concatenate([anchors, upn, ipn])

        keep = np.flatnonzero(ok)
        remap = -np.ones(len(anchors), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        sel = ok[pos_a]
        order = np.argsort(remap[pos_a[sel]], kind="stable")
        return ContrastivePairs(
            anchors=anchors[keep],
            pos_anchor=remap[pos_a[sel]][order],
            pos_node=pos_n[sel][order],
            negatives=negs[keep],
            skipped=int(len(anchors) - len(keep)),
        )


def build_pairs(m, batch, w: LossWeights, n_neg: int, seed_or_rng, r: SparseMatrix) -> ContrastivePairs:
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    return PairSampler(m, r, w.theta_neg, n_neg).sample(batch, rng)


@dataclass
class ContrastiveResult:
    value: float
    grad_rec: np.ndarray
    grad_pre: np.ndarray


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms, safe


def loss_con(z_rec: np.ndarray, z_pre: np.ndarray, pairs: ContrastivePairs, tau: float,
             chunk: int = 256) -> ContrastiveResult:
    """Σ_{(i,j)∈Q⁺} -log( exp(s_ij/τ) / Σ_{j̃∈Q⁻_i} exp(s_ij̃/τ) ), s = cosine.

    The denominator runs over anchor i's own sampled negatives. A zero vector
    has similarity 0 with everything and receives no gradient.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n_anchor = len(pairs.anchors)
    d_rec = np.zeros_like(z_rec)
    d_pre = np.zeros_like(z_pre)
    if n_anchor == 0:
        return ContrastiveResult(0.0, d_rec, d_pre)

    a_hat, a_norm, a_safe = _unit_rows(z_rec[pairs.anchors])
    pre_hat, pre_norm, pre_safe = _unit_rows(z_pre)

    g_a = np.zeros_like(a_hat)            # dL/dâ
    g_pre = np.zeros_like(z_pre)          # dL/db̂ per node

    # positive terms: -s/τ each
    s_pos = np.einsum("ij,ij->i", a_hat[pairs.pos_anchor], pre_hat[pairs.pos_node])
    value = -float(np.sum(s_pos)) / tau
    g_a -= _scatter_add(pairs.pos_anchor, pre_hat[pairs.pos_node], n_anchor) / tau
    g_pre -= _scatter_add(pairs.pos_node, a_hat[pairs.pos_anchor], len(z_pre)) / tau

    n_pos = np.bincount(pairs.pos_anchor, minlength=n_anchor).astype(np.float64)
    for lo in range(0, n_anchor, chunk):
        hi = min(lo + chunk, n_anchor)
        neg = pairs.negatives[lo:hi]
        b = pre_hat[neg]                                  # (c, k, d)
        logits = np.einsum("cd,ckd->ck", a_hat[lo:hi], b) / tau
        top = logits.max(axis=1, keepdims=True)
        ex = np.exp(logits - top)
        denom = ex.sum(axis=1, keepdims=True)
        lse = (top + np.log(denom))[:, 0]
        value += float(np.sum(n_pos[lo:hi] * lse))
        coef = (n_pos[lo:hi, None] * ex / denom) / tau    # dL/ds for each negative
        g_a[lo:hi] += np.einsum("ck,ckd->cd", coef, b)
        rows = np.repeat(np.arange(hi - lo), neg.shape[1])
        g_pre += sp.csr_matrix((coef.ravel(), (neg.ravel(), rows)), shape=(len(z_pre), hi - lo)) @ a_hat[lo:hi]

    # chain through x̂ = x/|x|: dx = (g - (g·x̂)x̂)/|x|
    ga = (g_a - np.sum(g_a * a_hat, axis=1, keepdims=True) * a_hat) / a_safe[:, None]
    ga[a_norm == 0] = 0.0
    d_rec[pairs.anchors] = ga  # anchors are distinct nodes
    d_pre = (g_pre - np.sum(g_pre * pre_hat, axis=1, keepdims=True) * pre_hat) / pre_safe[:, None]
    d_pre[pre_norm == 0] = 0.0
    return ContrastiveResult(value, d_rec, d_pre)


@dataclass
class TotalLoss:
    value: float
    rec: float
    pre: float
    con: float
    grad_z_rec: np.ndarray
    grad_z_pre: np.ndarray
    grad_h_rec: np.ndarray
    grad_h_pre: np.ndarray


def loss_total(z_rec, z_pre, h_rec, h_pre, batch, r: SparseMatrix, m, w: LossWeights,
               pairs: ContrastivePairs | None = None) -> TotalLoss:
    """L = L_rec + λ_pre L_pre + λ_con L_con, with gradients w.r.t. both task tables and heads."""
    rec = loss_rec(z_rec, h_rec, batch, r, w)
    g_rec = rec.grad_z.copy()
    g_hrec = rec.grad_h.copy()
    g_pre = np.zeros_like(z_pre)
    g_hpre = np.zeros_like(h_pre)
    pre_v = con_v = 0.0
    if w.lambda_pre > 0:
        pre = loss_pre(z_pre, h_pre, batch, m)
        pre_v = pre.value
        g_pre += w.lambda_pre * pre.grad_z
        g_hpre += w.lambda_pre * pre.grad_h
    if w.lambda_con > 0 and pairs is not None:
        con = loss_con(z_rec, z_pre, pairs, w.tau)
        con_v = con.value
        g_rec += w.lambda_con * con.grad_rec
        g_pre += w.lambda_con * con.grad_pre
    total = rec.value + w.lambda_pre * pre_v + w.lambda_con * con_v
    return TotalLoss(total, rec.value, pre_v, con_v, g_rec, g_pre, g_hrec, g_hpre)
