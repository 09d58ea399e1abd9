"""Full-catalog top-K ranking and Recall@K / NDCG@K."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import SparseMatrix

K_GRID = (5, 10, 15, 20)


@dataclass
class RankingResult:
    users: np.ndarray
    ranked: list        # per user: item ids, best first
    test_pos: list      # per user: held-out positive item ids


def score_matrix(z: np.ndarray, h: np.ndarray, n_users: int, users=None) -> np.ndarray:
    users = np.arange(n_users) if users is None else np.asarray(users)
    return (z[users] * h) @ z[n_users:].T


def _topk_row(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best finite scores; ties by ascending item id."""
    finite = np.isfinite(scores)
    n_ok = int(finite.sum())
    k = min(k, n_ok)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k < n_ok:
        kth = np.partition(np.where(finite, scores, -np.inf), -k)[-k]
        cand = np.flatnonzero(finite & (scores >= kth))
    else:
        cand = np.flatnonzero(finite)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]]


def rank_items(z: np.ndarray, h: np.ndarray, n_users: int, exclusions: SparseMatrix, k: int,
               users=None, test_pos: SparseMatrix | None = None, block: int = 1024) -> RankingResult:
    """Sort every item by h·(p_u⊙q_v), descending, skipping each user's excluded items."""
    if k < 1:
        raise ValueError("k must be >= 1")
    users = np.arange(n_users) if users is None else np.asarray(users, dtype=np.int64)
    ranked = []
    for lo in range(0, len(users), block):
        chunk = users[lo:lo + block]
        s = score_matrix(z, h, n_users, chunk)
        for row, u in zip(s, chunk):
            cols, _ = exclusions.row(u)
            row[cols] = -np.inf
            ranked.append(_topk_row(row, k))
    tp = [test_pos.row(u)[0].copy() for u in users] if test_pos is not None else [np.empty(0, np.int64)] * len(users)
    return RankingResult(users, ranked, tp)


def _user_metrics(result: RankingResult, k: int):
    for ranked, pos in zip(result.ranked, result.test_pos):
        if len(pos) == 0:
            continue
        hits = np.isin(ranked[:k], pos)
        yield ranked, pos, hits


def recall_at_k(result: RankingResult, k: int) -> float:
    vals = [hits.sum() / len(pos) for _, pos, hits in _user_metrics(result, k)]
    return float(np.mean(vals)) if vals else 0.0


def ndcg_at_k(result: RankingResult, k: int) -> float:
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    vals = []
    for _, pos, hits in _user_metrics(result, k):
        dcg = float(np.sum(discounts[:len(hits)][hits]))
        idcg = float(np.sum(discounts[:min(k, len(pos))]))
        vals.append(dcg / idcg)
    return float(np.mean(vals)) if vals else 0.0


def evaluate(z, h, n_users, exclusions: SparseMatrix, test_pos: SparseMatrix, ks=K_GRID) -> dict:
    """{("recall", k): value, ("ndcg", k): value} over users that have test positives."""
    users = np.flatnonzero(test_pos.row_nnz() > 0)
    res = rank_items(z, h, n_users, exclusions, max(ks), users=users, test_pos=test_pos)
    out = {}
    for k in ks:
        out[("recall", k)] = recall_at_k(res, k)
    for k in ks:
        out[("ndcg", k)] = ndcg_at_k(res, k)
    return out


def metrics_csv(metrics: dict) -> str:
    lines = ["metric,k,value"]
    lines += [f"{name},{k},{value:.6f}" for (name, k), value in metrics.items()]
    return "\n".join(lines) + "\n"
