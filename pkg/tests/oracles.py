"""Independent brute-force references used across the tests."""
import math

import numpy as np

from dualrec.hetgraph import HeteroGraph, Relation
from dualrec.sparse import SparseMatrix


def random_binary(rng, shape, density=0.3):
    return (rng.random(shape) < density).astype(np.float64)


def random_hin(rng, max_nodes=50):
    """Random graph over U (users), I (items), X (extra), one relation per unordered type pair."""
    total = int(rng.integers(6, max_nodes + 1))
    n_u = int(rng.integers(2, total - 3))
    n_i = int(rng.integers(1, total - n_u - 1))
    n_x = total - n_u - n_i
    counts = {"U": n_u, "I": n_i, "X": n_x}
    dens = rng.uniform(0.05, 0.5)
    rels = {}
    for name, (a, b) in {"ui": ("U", "I"), "uu": ("U", "U"), "ix": ("I", "X"), "ux": ("U", "X"),
                          "ii": ("I", "I"), "xx": ("X", "X")}.items():
        dense = random_binary(rng, (counts[a], counts[b]), dens)
        rels[name] = Relation(name, a, b, SparseMatrix.from_dense(dense))
    return HeteroGraph(counts, rels, "U", "I", "ui")


def random_metapath(rng, max_legs=4):
    legs = int(rng.integers(1, max_legs + 1))
    inner = [str(t) for t in rng.choice(["U", "I", "X"], legs - 1)]
    return "-".join(["U", *inner, "I"])


def edge_lists(g):
    """{(src_type, dst_type): {node: [neighbours]}}, reverse direction added for cross-type relations."""
    adj = {}
    for r in g.relations.values():
        rows, cols = np.nonzero(r.matrix.to_dense())
        for i, j in zip(rows.tolist(), cols.tolist()):
            adj.setdefault((r.src, r.dst), {}).setdefault(i, []).append(j)
            if r.src != r.dst:
                adj.setdefault((r.dst, r.src), {}).setdefault(j, []).append(i)
    return adj


def dfs_path_counts(g, types):
    """Dense matrix of typed path-instance counts by depth-first enumeration."""
    adj = edge_lists(g)
    out = np.zeros((g.node_counts[types[0]], g.node_counts[types[-1]]))

    def walk(start, node, depth):
        if depth == len(types) - 1:
            out[start, node] += 1
            return
        for nxt in adj.get((types[depth], types[depth + 1]), {}).get(node, []):
            walk(start, nxt, depth + 1)

    for s in range(out.shape[0]):
        walk(s, s, 0)
    return out


def naive_rec_loss(z, h, batch, r_dense, c_plus, c_minus):
    """Σ_{u∈B,v} c_uv (r_uv - R̂_uv)², one pair at a time."""
    m = r_dense.shape[0]
    total = 0.0
    for u in batch:
        for v in range(r_dense.shape[1]):
            pred = sum(h[i] * z[u, i] * z[m + v, i] for i in range(len(h)))
            c = c_plus if r_dense[u, v] else c_minus
            total += c * (r_dense[u, v] - pred) ** 2
    return total


def naive_pre_loss(z, h, batch, m_dense):
    m = m_dense.shape[0]
    total = 0.0
    for u in batch:
        for v in range(m_dense.shape[1]):
            pred = sum(h[i] * z[u, i] * z[m + v, i] for i in range(len(h)))
            total += (m_dense[u, v] - pred) ** 2
    return total


def cosine(a, b):
    na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def naive_con_loss(z_rec, z_pre, pairs, tau):
    total = 0.0
    for i, anchor in enumerate(pairs.anchors):
        denom = sum(math.exp(cosine(z_rec[anchor], z_pre[j]) / tau) for j in pairs.negatives[i])
        for j in pairs.positives_of(i):
            total += -math.log(math.exp(cosine(z_rec[anchor], z_pre[j]) / tau) / denom)
    return total


def naive_ranking(scores, excluded, k):
    """Full python sort: score descending, item id ascending."""
    cand = [(-scores[v], v) for v in range(len(scores)) if v not in excluded]
    cand.sort()
    return [v for _, v in cand[:k]]


def gradcheck_instance(seed, site="fused", m=3, n=3, d=4):
    """A random 6-node model with every loss active; masks and pairs fixed so the loss is deterministic."""
    from dualrec.hetgraph import InteractionSplit
    from dualrec.metapath import link_score
    from dualrec.model import DualModel, init_params
    from dualrec.objectives import LossWeights, PairSampler
    from dualrec.trainer import DualData, dropout_mask

    rng = np.random.default_rng(seed)
    r = (rng.random((m, n)) < 0.5).astype(float)
    r[0, 0] = 1
    c = rng.integers(0, 3, (m, n)).astype(float)
    c[:, 0] += 1
    link = link_score(SparseMatrix.from_dense(c))
    empty = np.zeros((0, 2), dtype=np.int64)
    split = InteractionSplit(SparseMatrix.from_dense(r), empty, empty)
    data = DualData(split, link, link.scores.binarize(), SparseMatrix.zeros(m, n), SparseMatrix.zeros(m, n))
    model = DualModel(data.r, data.g_phi, 2)
    params = init_params(m + n, d, seed, head_init=0.5)
    params = {k: v + rng.normal(0, 0.3, v.shape) for k, v in params.items()}
    w = LossWeights(c_plus=1.0, c_minus=0.3, lambda_pre=0.7, lambda_con=0.5, tau=0.5, theta_neg=0.5)
    batch = np.array([0, 2])
    pairs = PairSampler(link, data.r, w.theta_neg, 3).sample(batch, rng)
    shape = (m + n, d)
    names = ("rec", "pre") if site == "fused" else ("E_S", "E_T")
    masks = {k: dropout_mask(rng, shape, 0.3) for k in names}
    return model, params, batch, data, w, masks, pairs


def finite_difference_grads(f, params, eps=1e-6):
    out = {}
    for name, value in params.items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            p = dict(params)
            p[name] = value.copy()
            p[name][idx] += eps
            fp = f(p)
            p[name][idx] -= 2 * eps
            num[idx] = (fp - f(p)) / (2 * eps)
        out[name] = num
    return out


def worst_gradient_error(seed, site="fused"):
    from dualrec.trainer import batch_loss_and_grads

    model, params, batch, data, w, masks, pairs = gradcheck_instance(seed, site)

    def f(p):
        return batch_loss_and_grads(model, p, batch, data, w, masks, pairs, site)[0].value

    _, grads = batch_loss_and_grads(model, params, batch, data, w, masks, pairs, site)
    num = finite_difference_grads(f, params)
    return max(np.linalg.norm(num[k] - grads[k]) / max(np.linalg.norm(num[k]), 1e-12) for k in params)
