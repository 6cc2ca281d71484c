"""Multi-head attention over relation graphs with edge features.

Per layer and head, node ``i`` updates from itself and its neighbours::

    v_i' = sum_{k in N(i) + {i}} gamma_ik * Theta_v v_k
    gamma_i. = softmax_k( a . LeakyReLU(Theta_a [v_i || v_k || r_ik]) )

``Theta_a`` is stored as three blocks (centre, neighbour, relation) so the
concatenation never has to be materialized; ``r_ii`` is a learned per-layer
self-relation vector. Hidden layers concatenate heads, the last layer
averages them. The graph representation is the claim node's final state.

Everything is batched over graphs padded to the same size; masked entries
never receive attention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .graph import RelationGraph
from .params import ParamSet


@dataclass(frozen=True)
class GnnConfig:
    layers: int = 2
    heads: int = 8
    dim_in: int = 64
    dim_hidden: int = 64
    leaky_slope: float = 0.2
    attn_dim: int | None = None
    dim_edge: int | None = None

    def __post_init__(self):
        if self.layers < 0 or self.heads < 1:
            raise ValueError("layers must be >= 0 and heads >= 1")
        if self.dim_hidden % self.heads:
            raise ValueError(
                f"dim_hidden={self.dim_hidden} is not divisible by heads={self.heads}"
            )
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")

    @property
    def attn_width(self) -> int:
        return self.attn_dim or self.dim_hidden // self.heads

    @property
    def edge_width(self) -> int:
        return self.dim_edge or self.dim_in

    @property
    def dim_out(self) -> int:
        return self.dim_hidden if self.layers else self.dim_in

    def layer_dims(self, layer: int) -> tuple[int, int]:
        """(input width, per-head value width) of ``layer``."""
        d_in = self.dim_in if layer == 0 else self.dim_hidden
        last = layer == self.layers - 1
        return d_in, self.dim_hidden if last else self.dim_hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: GnnConfig, rng: np.random.Generator, prefix: str = "gnn") -> ParamSet:
    """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for every tensor."""
    p = ParamSet()
    H, m, de = cfg.heads, cfg.attn_width, cfg.edge_width

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for layer in range(cfg.layers):
        d_in, c = cfg.layer_dims(layer)
        fan = 2 * d_in + de
        p[f"{prefix}.{layer}.att_src"] = u((H, m, d_in), fan)
        p[f"{prefix}.{layer}.att_dst"] = u((H, m, d_in), fan)
        p[f"{prefix}.{layer}.att_rel"] = u((H, m, de), fan)
        p[f"{prefix}.{layer}.att_vec"] = u((H, m), m)
        p[f"{prefix}.{layer}.value"] = u((H, c, d_in), d_in)
        p[f"{prefix}.{layer}.r_self"] = u((de,), de)
    return p


@dataclass
class GraphBatch:
    """Dense, padded tensors for a list of graphs of equal ``n_max``."""

    x: np.ndarray  # [B, n, d]
    e: np.ndarray  # [B, n, n, de]
    adj: np.ndarray  # [B, n, n] bool, symmetric, empty diagonal
    claim: np.ndarray  # [B] claim node index
    evidence: np.ndarray  # [B, n] bool, evidence nodes

    @classmethod
    def from_graphs(cls, graphs: list[RelationGraph]) -> "GraphBatch":
        return PackedGraphs(graphs).batch(range(len(graphs)))

    @property
    def mask(self) -> np.ndarray:
        n = self.adj.shape[1]
        return self.adj | np.eye(n, dtype=bool)[None]

    def __len__(self):
        return self.x.shape[0]


class PackedGraphs:
    """Graphs kept in compact form; :meth:`batch` densifies a subset.

    Avoids holding ``[N, n, n, d]`` edge tensors for a whole dataset.
    """

    def __init__(self, graphs: list[RelationGraph]):
        sizes = {g.n_max for g in graphs}
        if len(sizes) > 1:
            raise ValueError(f"graphs must share n_max, got {sorted(sizes)}")
        self.n = sizes.pop() if sizes else 0
        self.x = np.stack([g.node_features for g in graphs]) if graphs else np.zeros((0, 0, 0))
        self.claim = np.array([g.claim_index() for g in graphs], dtype=np.int64)
        self.evidence = np.zeros((len(graphs), self.n), dtype=bool)
        self.edges = []
        self.de = graphs[0].edge_features.shape[1] if graphs and graphs[0].edge_features.ndim == 2 else self.x.shape[-1]
        for b, g in enumerate(graphs):
            self.evidence[b, g.evidence_nodes()] = True
            adj = g.adjacency()
            ii, jj = np.nonzero(adj)
            dense = g.dense_edge_features()
            self.edges.append((ii, jj, dense[ii, jj]))

    def __len__(self):
        return len(self.edges)

    def batch(self, indices) -> GraphBatch:
        indices = np.asarray(list(indices), dtype=np.int64)
        B = len(indices)
        e = np.zeros((B, self.n, self.n, self.de))
        adj = np.zeros((B, self.n, self.n), dtype=bool)
        for pos, b in enumerate(indices):
            ii, jj, feats = self.edges[b]
            e[pos, ii, jj] = feats
            adj[pos, ii, jj] = True
        return GraphBatch(self.x[indices], e, adj, self.claim[indices], self.evidence[indices])


class NumericalInputError(ValueError):
    pass


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericalInputError("non-finite values in GNN input")


def _project_nodes(x, w):
    # x [B,n,d], w [H,m,d] -> [B,H,n,m]
    return np.einsum("bnd,hmd->bhnm", x, w, optimize=True)


def _project_relations(e, adj, w, r_self):
    # e [B,n,n,de], w [H,m,de] -> [B,H,n,n,m]; only real edges are projected
    # (everything else is masked out of the softmax), the diagonal gets r_self
    B, n, _, de = e.shape
    H, m, _ = w.shape
    bb, ii, jj = np.nonzero(adj)
    rel = np.zeros((B, H, n, n, m))
    if len(bb):
        proj = (e[bb, ii, jj] @ w.reshape(H * m, de).T).reshape(-1, H, m)
        rel[bb, :, ii, jj] = proj
    idx = np.arange(n)
    rel[:, :, idx, idx, :] = (w @ r_self)[None, :, None, :]
    return rel


def layer_forward(layer, cfg: GnnConfig, params: ParamSet, x, e, mask, prefix="gnn", use_numba=None):
    """One attention layer. Returns ``(new_states, cache)``."""
    p = f"{prefix}.{layer}."
    src = _project_nodes(x, params[p + "att_src"])
    dst = _project_nodes(x, params[p + "att_dst"])
    rel = _project_relations(e, mask & ~np.eye(mask.shape[1], dtype=bool), params[p + "att_rel"], params[p + "r_self"])
    gamma = _kernels.attention_forward(
        src, dst, rel, mask, params[p + "att_vec"], cfg.leaky_slope, use_numba
    )
    v = _project_nodes(x, params[p + "value"])  # [B,H,n,c]
    out = gamma @ v
    B, H, n, c = out.shape
    if layer == cfg.layers - 1:
        new = out.mean(axis=1)
    else:
        new = out.transpose(0, 2, 1, 3).reshape(B, n, H * c)
    cache = dict(x=x, src=src, dst=dst, rel=rel, gamma=gamma, v=v)
    return new, cache


def layer_backward(layer, cfg: GnnConfig, params: ParamSet, cache, e, mask, g_new, grads: ParamSet, prefix="gnn", use_numba=None):
    """Backprop ``g_new`` through one layer; accumulates into ``grads``.

    Returns ``(g_x, g_e)`` for the layer's input states and edge features.
    """
    p = f"{prefix}.{layer}."
    x, v, gamma = cache["x"], cache["v"], cache["gamma"]
    B, H, n, c = v.shape
    if layer == cfg.layers - 1:
        g_out = np.broadcast_to(g_new[:, None] / H, (B, H, n, c))
    else:
        g_out = g_new.reshape(B, n, H, c).transpose(0, 2, 1, 3)
    g_gamma = g_out @ v.transpose(0, 1, 3, 2)
    g_v = gamma.transpose(0, 1, 3, 2) @ g_out

    w_val = params[p + "value"]
    grads[p + "value"] += np.einsum("bhnc,bnd->hcd", g_v, x, optimize=True)
    g_x = np.einsum("bhnc,hcd->bnd", g_v, w_val, optimize=True)

    g_src, g_dst, g_rel, g_att = _kernels.attention_backward(
        np.ascontiguousarray(g_gamma), gamma, cache["src"], cache["dst"], cache["rel"],
        mask, params[p + "att_vec"], cfg.leaky_slope, use_numba,
    )
    grads[p + "att_vec"] += g_att
    w_src, w_dst, w_rel = params[p + "att_src"], params[p + "att_dst"], params[p + "att_rel"]
    grads[p + "att_src"] += np.einsum("bhnm,bnd->hmd", g_src, x, optimize=True)
    grads[p + "att_dst"] += np.einsum("bhnm,bnd->hmd", g_dst, x, optimize=True)
    g_x += np.einsum("bhnm,hmd->bnd", g_src, w_src, optimize=True)
    g_x += np.einsum("bhnm,hmd->bnd", g_dst, w_dst, optimize=True)

    idx = np.arange(n)
    g_diag = g_rel[:, :, idx, idx, :].sum(axis=(0, 2))  # [H,m]
    de = e.shape[-1]
    bb, ii, jj = np.nonzero(mask & ~np.eye(n, dtype=bool))
    g_edges = g_rel[bb, :, ii, jj].reshape(len(bb), H * w_rel.shape[1])  # [E, H*m]
    grads[p + "att_rel"] += (g_edges.T @ e[bb, ii, jj]).reshape(w_rel.shape)
    grads[p + "att_rel"] += g_diag[:, :, None] * params[p + "r_self"][None, None, :]
    grads[p + "r_self"] += np.einsum("hm,hmd->d", g_diag, w_rel)
    g_e = np.zeros(e.shape)
    g_e[bb, ii, jj] = g_edges @ w_rel.reshape(-1, de)
    return g_x, g_e


def forward(cfg: GnnConfig, params: ParamSet, batch: GraphBatch, prefix="gnn", use_numba=None):
    """Run every layer. Returns ``(final_states [B,n,dim_out], caches)``."""
    _check_finite(batch.x, batch.e)
    mask = batch.mask
    x = batch.x
    caches = []
    for layer in range(cfg.layers):
        x, cache = layer_forward(layer, cfg, params, x, batch.e, mask, prefix, use_numba)
        caches.append(cache)
    return x, caches


def backward(cfg: GnnConfig, params: ParamSet, batch: GraphBatch, caches, g_states, prefix="gnn", use_numba=None):
    """Reverse pass from ``dL/d(final states)``.

    Returns ``(param_grads, g_node_features, g_edge_features)``; the edge
    gradient is w.r.t. the dense symmetric tensor ``batch.e``.
    """
    if caches is None or len(caches) != cfg.layers:
        raise RuntimeError("backward() needs the caches from a forward() call")
    grads = ParamSet({k: np.zeros_like(v) for k, v in params.items() if k.startswith(prefix + ".")})
    mask = batch.mask
    g_x = g_states
    g_e = np.zeros_like(batch.e)
    for layer in reversed(range(cfg.layers)):
        g_x, g_e_l = layer_backward(layer, cfg, params, caches[layer], batch.e, mask, g_x, grads, prefix, use_numba)
        g_e += g_e_l
    return grads, g_x, g_e


def readout(batch: GraphBatch, states: np.ndarray) -> np.ndarray:
    """Claim node state of every graph, ``[B, dim]``."""
    return states[np.arange(len(batch)), batch.claim]


def readout_backward(batch: GraphBatch, g_readout: np.ndarray, n: int) -> np.ndarray:
    g = np.zeros((len(batch), n, g_readout.shape[1]))
    g[np.arange(len(batch)), batch.claim] = g_readout
    return g


# -- single-graph conveniences -------------------------------------------------


def attention_scores(layer: int, head: int, graph: RelationGraph, states, cfg: GnnConfig, params: ParamSet, prefix="gnn"):
    """Attention matrix ``[n, n]`` of one head at one layer for ``graph``.

    Row ``i`` is non-zero only on ``N(i)`` and ``i``; pad nodes put all
    weight on themselves.
    """
    batch = GraphBatch.from_graphs([graph])
    states = np.asarray(states, dtype=np.float64)[None]
    _check_finite(states)
    p = f"{prefix}.{layer}."
    src = _project_nodes(states, params[p + "att_src"])
    dst = _project_nodes(states, params[p + "att_dst"])
    rel = _project_relations(batch.e, batch.adj, params[p + "att_rel"], params[p + "r_self"])
    gamma = _kernels.attention_forward(src, dst, rel, batch.mask, params[p + "att_vec"], cfg.leaky_slope)
    return gamma[0, head]


def graph_forward(graph: RelationGraph, cfg: GnnConfig, params: ParamSet, prefix="gnn"):
    """All layers on one graph; returns ``(final_states [n, dim_out], readout vector)``."""
    batch = GraphBatch.from_graphs([graph])
    states, _ = forward(cfg, params, batch, prefix)
    return states[0], readout(batch, states)[0]
