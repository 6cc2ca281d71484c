"""Relation graph construction.

One graph per sample: a claim node, one node per evidence piece, one node
per distinct entity, then isolated zero-feature pad nodes up to ``n_max``.
Entities hang off every claim/evidence node whose text mentions them
("belong to" edges) and off each other through extracted relations.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .extractor import Triplet, norm_key

BELONG_TO = "belong to"


class NodeKind(str, enum.Enum):
    CLAIM = "claim"
    EVIDENCE = "evidence"
    ENTITY = "entity"
    PAD = "pad"


class GraphMode(str, enum.Enum):
    FULL = "full"
    NO_ERE = "no-ere"
    FULLY_CONNECTED = "fully-connected"


@dataclass(frozen=True)
class Node:
    kind: NodeKind
    text: str
    evidence_index: int | None = None


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    relation: str


@dataclass(eq=False)
class RelationGraph:
    """Finalized, padded graph. Treat as immutable.

    ``edges`` holds one record per undirected edge (``i < j``);
    ``adjacency()`` and ``dense_edge_features()`` give symmetric views.
    """

    nodes: list[Node]
    node_features: np.ndarray
    edges: list[Edge]
    edge_features: np.ndarray
    n_max: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_real(self) -> int:
        return sum(n.kind is not NodeKind.PAD for n in self.nodes)

    def claim_index(self) -> int:
        idx = [k for k, n in enumerate(self.nodes) if n.kind is NodeKind.CLAIM]
        if len(idx) != 1:
            raise ValueError(f"graph must have exactly one claim node, found {len(idx)}")
        return idx[0]

    def evidence_nodes(self) -> list[int]:
        return [k for k, n in enumerate(self.nodes) if n.kind is NodeKind.EVIDENCE]

    def neighbors(self, i: int) -> list[int]:
        out = set()
        for e in self.edges:
            if e.i == i:
                out.add(e.j)
            elif e.j == i:
                out.add(e.i)
        return sorted(out)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_max, self.n_max), dtype=bool)
        for e in self.edges:
            a[e.i, e.j] = a[e.j, e.i] = True
        return a

    def dense_edge_features(self) -> np.ndarray:
        """``[n, n, d]`` edge features; parallel edges are averaged, the diagonal is zero."""
        d = self.edge_features.shape[1] if self.edge_features.ndim == 2 else self.node_features.shape[1]
        out = np.zeros((self.n_max, self.n_max, d))
        counts = np.zeros((self.n_max, self.n_max))
        for e, f in zip(self.edges, self.edge_features):
            out[e.i, e.j] += f
            out[e.j, e.i] += f
            counts[e.i, e.j] += 1
            counts[e.j, e.i] += 1
        nz = counts > 0
        out[nz] /= counts[nz][:, None]
        return out

    def to_json(self, include_features: bool = False) -> dict:
        doc = {
            "n_max": self.n_max,
            "nodes": [
                {"kind": n.kind.value, "text": n.text}
                | ({"evidence_index": n.evidence_index} if n.evidence_index is not None else {})
                for n in self.nodes
            ],
            "edges": [{"i": e.i, "j": e.j, "relation": e.relation} for e in self.edges],
        }
        if include_features:
            doc["node_features"] = self.node_features.tolist()
            doc["edge_features"] = self.edge_features.tolist()
            doc["diagnostics"] = self.diagnostics
        return doc

    def dumps(self, include_features: bool = False) -> str:
        return json.dumps(self.to_json(include_features), ensure_ascii=False)

    @classmethod
    def from_json(cls, doc: dict) -> "RelationGraph":
        """Inverse of ``to_json(include_features=True)``."""
        nodes = [Node(NodeKind(n["kind"]), n["text"], n.get("evidence_index")) for n in doc["nodes"]]
        nf = np.asarray(doc["node_features"], dtype=np.float64)
        ef = np.asarray(doc["edge_features"], dtype=np.float64).reshape(len(doc["edges"]), nf.shape[1])
        return cls(
            nodes=nodes,
            node_features=nf,
            edges=[Edge(e["i"], e["j"], e["relation"]) for e in doc["edges"]],
            edge_features=ef,
            n_max=int(doc["n_max"]),
            diagnostics=dict(doc.get("diagnostics", {})),
        )


def _count_mentions(key: str, texts_low: Sequence[str]) -> int:
    return sum(t.count(key) for t in texts_low)


def build_graph(
    claim: str,
    evidence: Sequence[str],
    triplets: Sequence[Triplet],
    embed,
    n_max: int = 20,
    mode: GraphMode | str = GraphMode.FULL,
) -> RelationGraph:
    """Build the padded relation graph for one claim and its evidence.

    Node order is claim, evidence (input order), entities (first mention in
    ``triplets``), pads. When the real nodes do not fit, entities are ranked
    by how often they are mentioned across claim and evidence (ties keep
    first-mention order) and the lowest-ranked are dropped with their edges.
    An entity that no text mentions is attached to the text its triplet came
    from, or to the claim when the source is unknown.

    ``mode`` selects ablations: ``no-ere`` omits entity-entity edges,
    ``fully-connected`` links every pair of real nodes with a zero edge
    feature instead of the relation structure.
    """
    mode = GraphMode(mode)
    if not claim:
        raise ValueError("claim text must be non-empty")
    if n_max < 1 + len(evidence):
        raise ValueError(
            f"n_max={n_max} cannot hold the claim and {len(evidence)} evidence nodes"
        )

    texts = [claim, *evidence]
    texts_low = [t.lower() for t in texts]

    # distinct entities in first-mention order
    ent_display: dict[str, str] = {}
    ent_source: dict[str, object] = {}
    for t in triplets:
        for name in (t.head, t.tail):
            k = norm_key(name)
            if k not in ent_display:
                ent_display[k] = name
                ent_source[k] = t.source
    ent_keys = list(ent_display)

    room = n_max - len(texts)
    dropped: list[str] = []
    if len(ent_keys) > room:
        order = sorted(
            range(len(ent_keys)),
            key=lambda r: (-_count_mentions(ent_keys[r], texts_low), r),
        )
        keep = sorted(order[:room])
        dropped = [ent_keys[r] for r in sorted(order[room:])]
        ent_keys = [ent_keys[r] for r in keep]

    nodes = [Node(NodeKind.CLAIM, claim)]
    nodes += [Node(NodeKind.EVIDENCE, ev, k) for k, ev in enumerate(evidence)]
    ent_index = {}
    for k in ent_keys:
        ent_index[k] = len(nodes)
        nodes.append(Node(NodeKind.ENTITY, ent_display[k]))
    n_real = len(nodes)

    edges: list[Edge] = []
    duplicates: list[str] = []
    if mode is GraphMode.FULLY_CONNECTED:
        for i in range(n_real):
            for j in range(i + 1, n_real):
                edges.append(Edge(i, j, ""))
    else:
        for k in ent_keys:
            hosts = [h for h, low in enumerate(texts_low) if k in low]
            if not hosts:
                src = ent_source[k]
                hosts = [1 + src] if isinstance(src, int) and 0 <= src < len(evidence) else [0]
            for h in hosts:
                edges.append(Edge(h, ent_index[k], BELONG_TO))
        if mode is GraphMode.FULL:
            seen = set()
            for t in triplets:
                hk, tk = norm_key(t.head), norm_key(t.tail)
                if hk not in ent_index or tk not in ent_index:
                    continue
                i, j = sorted((ent_index[hk], ent_index[tk]))
                sig = (i, j, t.relation.lower())
                if sig in seen:
                    duplicates.append(t.format())
                    continue
                seen.add(sig)
                edges.append(Edge(i, j, t.relation))

    d = embed.dim
    feats = np.zeros((n_max, d))
    for k, node in enumerate(nodes):
        feats[k] = embed.embed(node.text)
    nodes += [Node(NodeKind.PAD, "")] * (n_max - n_real)

    edge_feats = np.zeros((len(edges), d))
    if mode is not GraphMode.FULLY_CONNECTED:
        rel_cache: dict[str, np.ndarray] = {}
        for r, e in enumerate(edges):
            if e.relation not in rel_cache:
                rel_cache[e.relation] = embed.embed(e.relation)
            edge_feats[r] = rel_cache[e.relation]

    diagnostics = {"dropped_entities": dropped, "duplicate_relations": duplicates}
    return RelationGraph(nodes, feats, edges, edge_feats, n_max, diagnostics)
