import numpy as np
import pytest
from helpers import dense_forward_oracle, gradient_check_instance, random_batch, rel_error
from hypothesis import given, settings
from hypothesis import strategies as st

from skan import _kernels
from skan.embedding import HashedEmbedding
from skan.extractor import Triplet
from skan.gnn import (
    GnnConfig,
    GraphBatch,
    NumericalInputError,
    attention_scores,
    backward,
    forward,
    graph_forward,
    init_params,
    readout,
)
from skan.graph import build_graph


def _setup(seed, layers=2, heads=2, d=8, hidden=4, n_max=6, B=3):
    rng = np.random.default_rng(seed)
    cfg = GnnConfig(layers=layers, heads=heads, dim_in=d, dim_hidden=hidden)
    params = init_params(cfg, rng)
    return cfg, params, random_batch(rng, B=B, n_max=n_max, d=d)


# -- config and init ------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        GnnConfig(heads=3, dim_hidden=64)
    with pytest.raises(ValueError):
        GnnConfig(leaky_slope=1.5)
    with pytest.raises(ValueError):
        GnnConfig(layers=-1)


def test_init_bounds_and_shapes():
    cfg = GnnConfig(layers=2, heads=4, dim_in=16, dim_hidden=8)
    p = init_params(cfg, np.random.default_rng(0))
    assert p["gnn.0.att_src"].shape == (4, 2, 16)
    assert p["gnn.0.value"].shape == (4, 2, 16)
    assert p["gnn.1.value"].shape == (4, 8, 8)
    assert p["gnn.1.att_rel"].shape == (4, 2, 16)
    assert np.abs(p["gnn.0.att_src"]).max() <= 1 / np.sqrt(2 * 16 + 16)
    assert np.abs(p["gnn.1.value"]).max() <= 1 / np.sqrt(8)
    again = init_params(cfg, np.random.default_rng(0))
    assert all(np.array_equal(p[k], again[k]) for k in p.names())


# -- oracle ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_forward_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    layers = int(rng.integers(1, 4))
    heads = int(rng.choice([1, 2, 4]))
    cfg = GnnConfig(layers=layers, heads=heads, dim_in=6, dim_hidden=heads * 2, leaky_slope=0.2)
    params = init_params(cfg, rng)
    batch = random_batch(rng, B=2, n_max=7, d=6)
    states, caches = forward(cfg, params, batch)
    for b in range(2):
        want, gammas = dense_forward_oracle(cfg, params, batch.x[b], batch.e[b], batch.adj[b])
        assert rel_error(states[b], want) <= 1e-10
        for layer in range(layers):
            assert rel_error(caches[layer]["gamma"][b], gammas[layer]) <= 1e-10


def test_equal_logits_give_uniform_weights():
    cfg, params, _ = _setup(0, layers=1, heads=1, d=4, hidden=4)
    params["gnn.0.att_vec"] = np.zeros_like(params["gnn.0.att_vec"])
    adj = np.zeros((1, 5, 5), dtype=bool)
    for k in (1, 2, 3):
        adj[0, 0, k] = adj[0, k, 0] = True
    x = np.random.default_rng(1).normal(size=(1, 5, 4))
    batch = GraphBatch(x, np.zeros((1, 5, 5, 4)), adj, np.zeros(1, dtype=np.int64), np.zeros((1, 5), bool))
    _, caches = forward(cfg, params, batch)
    g = caches[0]["gamma"][0, 0]
    np.testing.assert_allclose(g[0, :4], 0.25, atol=1e-15)
    assert g[0, 4] == 0.0
    assert g[4, 4] == 1.0  # isolated node


# -- attention properties -------------------------------------------------------


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.sampled_from([1, 2, 4]))
@settings(max_examples=60, deadline=None)
def test_attention_rows_are_distributions(seed, layers, heads):
    rng = np.random.default_rng(seed)
    cfg = GnnConfig(layers=layers, heads=heads, dim_in=4, dim_hidden=4)
    params = init_params(cfg, rng)
    batch = random_batch(rng, B=2, n_max=8, d=4, p_edge=float(rng.uniform(0, 1)))
    _, caches = forward(cfg, params, batch)
    for c in caches:
        g = c["gamma"]
        assert (g >= 0).all()
        np.testing.assert_allclose(g.sum(-1), 1.0, atol=1e-6)
        assert not g[~np.broadcast_to(batch.mask[:, None], g.shape)].any()
        isolated = ~batch.adj.any(-1)
        for b, i in zip(*np.nonzero(isolated)):
            np.testing.assert_array_equal(g[b, :, i, i], 1.0)


def test_pad_nodes_are_inert():
    cfg, params, batch = _setup(3)
    states, _ = forward(cfg, params, batch)
    pads = ~(np.abs(batch.x).sum(-1) > 0) & ~batch.adj.any(-1)
    assert pads.any()
    np.testing.assert_array_equal(states[pads], 0.0)


def test_state_depends_only_on_neighbourhood():
    cfg, params, batch = _setup(4, layers=1, B=1, n_max=6)
    batch.adj[:] = False
    batch.adj[0, 0, 1] = batch.adj[0, 1, 0] = True
    batch.x[0, :] = np.random.default_rng(0).normal(size=batch.x.shape[1:])
    before, _ = forward(cfg, params, batch)
    batch.x[0, 3] += 5.0
    after, _ = forward(cfg, params, batch)
    np.testing.assert_array_equal(before[0, :3], after[0, :3])
    assert not np.allclose(before[0, 3], after[0, 3])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    cfg = GnnConfig(layers=2, heads=2, dim_in=4, dim_hidden=4)
    params = init_params(cfg, rng)
    batch = random_batch(rng, B=1, n_max=6, d=4)
    perm = rng.permutation(6)
    moved = GraphBatch(
        batch.x[:, perm], batch.e[:, perm][:, :, perm], batch.adj[:, perm][:, :, perm],
        batch.claim, batch.evidence[:, perm],
    )
    a, _ = forward(cfg, params, batch)
    b, _ = forward(cfg, params, moved)
    np.testing.assert_allclose(a[:, perm], b, atol=1e-12)


def test_zero_layers_is_identity_readout():
    cfg, params, batch = _setup(5, layers=0)
    states, caches = forward(cfg, params, batch)
    assert caches == []
    np.testing.assert_array_equal(readout(batch, states), batch.x[np.arange(3), batch.claim])


def test_non_finite_input_rejected():
    cfg, params, batch = _setup(6)
    batch.x[0, 0, 0] = np.nan
    with pytest.raises(NumericalInputError):
        forward(cfg, params, batch)


def test_backward_needs_forward_cache():
    cfg, params, batch = _setup(7)
    with pytest.raises(RuntimeError):
        backward(cfg, params, batch, None, np.zeros((3, 6, 4)))


# -- gradients and kernel paths ---------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    assert gradient_check_instance(seed) <= 1e-4


@pytest.mark.skipif(_kernels.numba is None, reason="numba not installed")
@pytest.mark.parametrize("seed", range(5))
def test_numba_and_numpy_paths_agree(seed):
    cfg, params, batch = _setup(seed, layers=2, heads=2, n_max=9)
    s1, c1 = forward(cfg, params, batch, use_numba=True)
    s0, c0 = forward(cfg, params, batch, use_numba=False)
    np.testing.assert_allclose(s1, s0, rtol=1e-12, atol=1e-14)
    g = np.random.default_rng(seed).normal(size=s1.shape)
    g1 = backward(cfg, params, batch, c1, g, use_numba=True)
    g0 = backward(cfg, params, batch, c0, g, use_numba=False)
    for k in g1[0].names():
        np.testing.assert_allclose(g1[0][k], g0[0][k], rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(g1[1], g0[1], rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(g1[2], g0[2], rtol=1e-10, atol=1e-13)


# -- single-graph helpers ---------------------------------------------------------


def test_attention_scores_match_batched_forward():
    emb = HashedEmbedding(8, 1)
    g = build_graph(
        "alpha beta gamma", ["alpha likes beta", "beta near gamma"],
        [Triplet("alpha", "likes", "beta"), Triplet("beta", "near", "gamma")], emb, n_max=7,
    )
    cfg = GnnConfig(layers=2, heads=2, dim_in=8, dim_hidden=4)
    params = init_params(cfg, np.random.default_rng(0))
    batch = GraphBatch.from_graphs([g])
    _, caches = forward(cfg, params, batch)
    np.testing.assert_allclose(attention_scores(0, 1, g, g.node_features, cfg, params), caches[0]["gamma"][0, 1])
    states, vec = graph_forward(g, cfg, params)
    np.testing.assert_array_equal(vec, states[0])


def test_backward_on_edgeless_batch():
    cfg, params, batch = _setup(8)
    batch.adj[:] = False
    states, caches = forward(cfg, params, batch)
    grads, g_x, g_e = backward(cfg, params, batch, caches, np.ones_like(states))
    assert not g_e.any()
    assert all(np.isfinite(v).all() for _, v in grads.items())
