"""Shared test utilities: random graph batches, a brute-force dense
reimplementation of the attention layer, and finite differences."""

import numpy as np

from skan.extractor import norm_key
from skan.gnn import GnnConfig, GraphBatch
from skan.graph import BELONG_TO, GraphMode, NodeKind


def random_batch(rng, B=2, n_max=6, d=8, de=None, p_edge=0.4, min_real=1):
    """Random symmetric graphs with zero-feature pads after the real nodes."""
    de = de or d
    x = np.zeros((B, n_max, d))
    e = np.zeros((B, n_max, n_max, de))
    adj = np.zeros((B, n_max, n_max), dtype=bool)
    evidence = np.zeros((B, n_max), dtype=bool)
    for b in range(B):
        n_real = int(rng.integers(min_real, n_max + 1))
        x[b, :n_real] = rng.normal(size=(n_real, d))
        for i in range(n_real):
            for j in range(i + 1, n_real):
                if rng.random() < p_edge:
                    adj[b, i, j] = adj[b, j, i] = True
                    f = rng.normal(size=de)
                    e[b, i, j] = e[b, j, i] = f
        evidence[b, 1 : max(1, n_real // 2)] = True
    return GraphBatch(x=x, e=e, adj=adj, claim=np.zeros(B, dtype=np.int64), evidence=evidence)


def _lrelu(z, slope):
    return z if z > 0 else slope * z


def dense_layer_oracle(x, e, adj, att_src, att_dst, att_rel, att_vec, value, r_self, slope, last):
    """One layer for one graph, written with explicit loops.

    For every node i and every k in N(i) and i itself the full concatenation
    [v_i, v_k, r_ik] is built and multiplied by the stacked matrix
    Theta = [att_src | att_dst | att_rel].
    """
    n = x.shape[0]
    H, m, _ = att_src.shape
    c = value.shape[1]
    out = np.zeros((H, n, c))
    gammas = np.zeros((H, n, n))
    for h in range(H):
        theta = np.concatenate([att_src[h], att_dst[h], att_rel[h]], axis=1)  # [m, 2d+de]
        for i in range(n):
            support = [k for k in range(n) if k == i or adj[i, k]]
            logits = []
            for k in support:
                r = r_self if k == i else e[i, k]
                z = theta @ np.concatenate([x[i], x[k], r])
                logits.append(sum(att_vec[h, q] * _lrelu(z[q], slope) for q in range(m)))
            logits = np.array(logits)
            w = np.exp(logits - logits.max())
            w /= w.sum()
            for k, g in zip(support, w):
                gammas[h, i, k] = g
                out[h, i] += g * (value[h] @ x[k])
    if last:
        return out.mean(axis=0), gammas
    return np.concatenate([out[h] for h in range(H)], axis=1), gammas


def dense_forward_oracle(cfg: GnnConfig, params, x, e, adj, prefix="gnn"):
    states = x
    gammas = []
    for layer in range(cfg.layers):
        p = f"{prefix}.{layer}."
        states, g = dense_layer_oracle(
            states, e, adj, params[p + "att_src"], params[p + "att_dst"], params[p + "att_rel"],
            params[p + "att_vec"], params[p + "value"], params[p + "r_self"], cfg.leaky_slope,
            last=layer == cfg.layers - 1,
        )
        gammas.append(g)
    return states, gammas


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def fd_max_rel_error(f, theta, analytic, step=1e-5, floor=1e-6):
    """Central differences of scalar ``f`` at ``theta``; max entrywise
    ``|a - n| / max(|a|, |n|, floor)``."""
    num = np.zeros_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += step
        up = f(t)
        t[i] -= 2 * step
        down = f(t)
        num[i] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(num)), floor)
    return float((np.abs(analytic - num) / denom).max()), num


def gradient_check_instance(seed: int, use_numba=None) -> float:
    """Max relative error between analytic and central-difference gradients
    of the mean cross-entropy, over all parameters, node features and edge
    features of a small random batch."""
    from skan.verifier import Verifier, cross_entropy

    rng = np.random.default_rng(seed)
    heads = int(rng.integers(1, 3))
    d = int(rng.choice([4, 6, 8]))
    cfg = GnnConfig(layers=2, heads=heads, dim_in=d, dim_hidden=2 * heads, dim_edge=d)
    model = Verifier(cfg, seed=seed)
    batch = random_batch(rng, B=2, n_max=6, d=d, p_edge=0.5, min_real=2)
    gold = rng.integers(0, 2, size=2)
    cache = model.forward(batch, use_numba)
    grads, g_x, g_e = model.backward(cache, gold, use_numba)

    def loss():
        return cross_entropy(model.forward(batch, use_numba).probs, gold)[1]

    theta = model.params.flat()

    def f_params(t):
        model.params.load_flat(t)
        return loss()

    worst, _ = fd_max_rel_error(f_params, theta, grads.flat())
    model.params.load_flat(theta)

    x0 = batch.x.copy()
    real = np.abs(x0).sum(-1) > 0

    def f_x(flat):
        batch.x = x0.copy()
        batch.x[real] = flat.reshape(-1, d)
        return loss()

    err, _ = fd_max_rel_error(f_x, x0[real].ravel(), g_x[real].ravel())
    batch.x = x0
    worst = max(worst, err)

    e0 = batch.e.copy()
    edges = batch.adj

    def f_e(flat):
        batch.e = e0.copy()
        batch.e[edges] = flat.reshape(-1, d)
        return loss()

    err, _ = fd_max_rel_error(f_e, e0[edges].ravel(), g_e[edges].ravel())
    batch.e = e0
    return max(worst, err)


def check_invariants(claim, evidence, trips, n_max, mode, g):
    kinds = [n.kind for n in g.nodes]
    assert len(g.nodes) == n_max
    assert kinds.count(NodeKind.CLAIM) == 1 and kinds[0] is NodeKind.CLAIM
    ent_keys = [norm_key(n.text) for n in g.nodes if n.kind is NodeKind.ENTITY]
    assert len(ent_keys) == len(set(ent_keys))
    distinct = {norm_key(x) for t in trips for x in (t.head, t.tail)}
    if not g.diagnostics["dropped_entities"]:
        assert kinds.count(NodeKind.PAD) == n_max - (1 + len(evidence) + len(distinct))
    # order: claim, evidence, entities, pads
    rank = {NodeKind.CLAIM: 0, NodeKind.EVIDENCE: 1, NodeKind.ENTITY: 2, NodeKind.PAD: 3}
    assert [rank[k] for k in kinds] == sorted(rank[k] for k in kinds)
    pads = {k for k, kind in enumerate(kinds) if kind is NodeKind.PAD}
    for e in g.edges:
        assert e.i < e.j and e.i not in pads and e.j not in pads
    assert not g.node_features[sorted(pads)].any()
    adj = g.adjacency()
    assert (adj == adj.T).all() and not adj.diagonal().any()
    if mode is not GraphMode.FULLY_CONNECTED:
        for k, kind in enumerate(kinds):
            if kind is NodeKind.ENTITY:
                assert any(e.relation == BELONG_TO and e.j == k for e in g.edges)
