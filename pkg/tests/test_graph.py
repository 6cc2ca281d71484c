import json

import numpy as np
import pytest
from helpers import check_invariants
from hypothesis import given, settings
from hypothesis import strategies as st

from skan.embedding import HashedEmbedding
from skan.extractor import Triplet, norm_key
from skan.graph import BELONG_TO, GraphMode, NodeKind, RelationGraph, build_graph

EMB = HashedEmbedding(16, 42)

TIVOLI_CLAIM = "The park at which Tivolis Koncertsal is located opened on 15 August 1843"
TIVOLI_EVIDENCE = ["Tivolis Koncertsal is a concert hall located in Tivoli Gardens, a park that opened on 15 August 1843."]
TIVOLI_TRIPLETS = [
    Triplet("Tivolis Koncertsal", "located", "park", "claim"),
    Triplet("park", "opened", "15 August 1843", "claim"),
]


def test_case_study_graph():
    g = build_graph(TIVOLI_CLAIM, TIVOLI_EVIDENCE, TIVOLI_TRIPLETS, EMB, n_max=20)
    kinds = [n.kind for n in g.nodes]
    assert len(g.nodes) == 20
    assert kinds[:5] == [NodeKind.CLAIM, NodeKind.EVIDENCE, NodeKind.ENTITY, NodeKind.ENTITY, NodeKind.ENTITY]
    assert kinds.count(NodeKind.PAD) == 15
    assert [n.text for n in g.nodes[2:5]] == ["Tivolis Koncertsal", "park", "15 August 1843"]
    ere = [e for e in g.edges if e.relation != BELONG_TO]
    assert {(e.i, e.j, e.relation) for e in ere} == {(2, 3, "located"), (3, 4, "opened")}
    belong = {(e.i, e.j) for e in g.edges if e.relation == BELONG_TO}
    assert belong == {(h, ent) for h in (0, 1) for ent in (2, 3, 4)}
    np.testing.assert_array_equal(g.node_features[5:], 0.0)
    np.testing.assert_array_equal(g.node_features[0], EMB.embed(TIVOLI_CLAIM))
    np.testing.assert_array_equal(g.edge_features[[g.edges.index(e) for e in ere][0]], EMB.embed("located"))


def test_claim_only_graph():
    g = build_graph("Nothing here.", [], [], EMB, n_max=20)
    assert [n.kind for n in g.nodes].count(NodeKind.PAD) == 19
    assert g.edges == []
    assert g.claim_index() == 0


def test_entity_from_claim_and_evidence_is_merged():
    trips = [Triplet("Ford Fusion", "made by", "Ford", "claim"), Triplet("ford fusion", "introduced in", "2006", 0)]
    g = build_graph("The Ford Fusion is made by Ford.", ["The ford fusion was introduced in 2006."], trips, EMB)
    ents = [n.text for n in g.nodes if n.kind is NodeKind.ENTITY]
    assert ents == ["Ford Fusion", "Ford", "2006"]
    fusion = 2
    assert {e.i for e in g.edges if e.j == fusion and e.relation == BELONG_TO} == {0, 1}


def test_n_max_too_small():
    with pytest.raises(ValueError):
        build_graph("c", ["a", "b"], [], EMB, n_max=2)


def test_empty_claim_rejected():
    with pytest.raises(ValueError):
        build_graph("", [], [], EMB)


def test_truncation_keeps_most_mentioned_entities():
    trips = [Triplet("alpha", "r", "beta"), Triplet("gamma", "r", "delta")]
    g = build_graph("alpha gamma alpha gamma", ["alpha beta"], trips, EMB, n_max=4)
    assert [n.text for n in g.nodes] == ["alpha gamma alpha gamma", "alpha beta", "alpha", "gamma"]
    assert g.diagnostics["dropped_entities"] == ["beta", "delta"]
    assert all(e.i < 4 and e.j < 4 for e in g.edges)


def test_unmentioned_entity_attaches_to_its_source():
    g = build_graph("claim text", ["some evidence"], [Triplet("Qux", "r", "Zed", 0)], EMB)
    assert {(e.i, e.j) for e in g.edges if e.relation == BELONG_TO} == {(1, 2), (1, 3)}


def test_parallel_relations_are_kept_and_duplicates_reported():
    trips = [Triplet("a1", "likes", "b1"), Triplet("a1", "hates", "b1"), Triplet("b1", "likes", "a1")]
    g = build_graph("a1 b1", [], trips, EMB)
    ere = [e for e in g.edges if e.relation != BELONG_TO]
    assert [e.relation for e in ere] == ["likes", "hates"]
    assert g.diagnostics["duplicate_relations"] == ["(b1, likes, a1)"]
    dense = g.dense_edge_features()
    np.testing.assert_allclose(dense[1, 2], (EMB.embed("likes") + EMB.embed("hates")) / 2)
    np.testing.assert_allclose(dense[2, 1], dense[1, 2])


def test_modes():
    no_ere = build_graph(TIVOLI_CLAIM, TIVOLI_EVIDENCE, TIVOLI_TRIPLETS, EMB, mode="no-ere")
    assert all(e.relation == BELONG_TO for e in no_ere.edges)
    fc = build_graph(TIVOLI_CLAIM, TIVOLI_EVIDENCE, TIVOLI_TRIPLETS, EMB, mode=GraphMode.FULLY_CONNECTED)
    assert len(fc.edges) == 5 * 4 // 2
    assert not fc.edge_features.any()
    assert not fc.adjacency()[5:].any()


def test_json_round_trip_and_debug_dump():
    g = build_graph(TIVOLI_CLAIM, TIVOLI_EVIDENCE, TIVOLI_TRIPLETS, EMB)
    doc = json.loads(g.dumps())
    assert "node_features" not in doc
    assert doc["edges"][0] == {"i": 0, "j": 2, "relation": "belong to"}
    back = RelationGraph.from_json(json.loads(g.dumps(include_features=True)))
    assert back.nodes == g.nodes and back.edges == g.edges
    np.testing.assert_array_equal(back.node_features, g.node_features)
    np.testing.assert_array_equal(back.edge_features, g.edge_features)


# -- properties ------------------------------------------------------------------------

WORDS = ["alpha", "beta", "gamma", "delta", "Omega", "park", "hall", "1843", "Ford", "fusion"]


@st.composite
def build_inputs(draw):
    n_ev = draw(st.integers(0, 4))
    words = st.lists(st.sampled_from(WORDS), min_size=1, max_size=6).map(" ".join)
    claim = draw(words)
    evidence = [draw(words) for _ in range(n_ev)]
    trips = []
    for _ in range(draw(st.integers(0, 10))):
        h, t = draw(st.sampled_from(WORDS)), draw(st.sampled_from(WORDS))
        if h.lower() == t.lower():
            continue
        src = draw(st.sampled_from(["claim", None] + list(range(n_ev))))
        trips.append(Triplet(h, draw(st.sampled_from(["r1", "r2", "is in"])), t, src))
    n_max = draw(st.integers(1 + n_ev, 14))
    mode = draw(st.sampled_from(list(GraphMode)))
    return claim, evidence, trips, n_max, mode


@given(build_inputs())
@settings(max_examples=300, deadline=None)
def test_graph_invariants(args):
    g = build_graph(args[0], args[1], args[2], EMB, args[3], args[4])
    check_invariants(*args, g)
    again = build_graph(args[0], args[1], args[2], EMB, args[3], args[4])
    assert g.dumps(include_features=True) == again.dumps(include_features=True)


@given(build_inputs())
@settings(max_examples=100, deadline=None)
def test_mentioned_nodes_reach_the_claim(args):
    claim, evidence, trips, n_max, mode = args
    g = build_graph(claim, evidence, trips, EMB, n_max, mode)
    adj = g.adjacency()
    seen, todo = {0}, [0]
    while todo:
        i = todo.pop()
        for j in np.nonzero(adj[i])[0]:
            if j not in seen:
                seen.add(int(j))
                todo.append(int(j))
    texts = [claim.lower(), *(t.lower() for t in evidence)]
    for k, n in enumerate(g.nodes):
        if n.kind is NodeKind.ENTITY and norm_key(n.text) in texts[0]:
            assert k in seen
