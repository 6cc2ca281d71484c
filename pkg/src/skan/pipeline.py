"""Glue from samples to graphs: extraction per text, then graph building."""

from __future__ import annotations

from typing import Sequence

from .data import Sample
from .extractor import ExtractionResult, LLMClient, Triplet, extract_oracle, extract_remote
from .graph import GraphMode, RelationGraph, build_graph


class OracleExtractor:
    """Uses each sample's gold triplets; texts without gold yield nothing."""

    kind = "oracle"

    def fingerprint(self) -> str:
        return "oracle"

    def extract(self, text: str, sample: Sample, source) -> ExtractionResult:
        return extract_oracle(text, sample.gold_triplets or [], source)


class RemoteExtractor:
    kind = "remote"

    def __init__(self, client: LLMClient):
        self.client = client

    def fingerprint(self) -> str:
        return self.client.fingerprint()

    def extract(self, text: str, sample: Sample, source) -> ExtractionResult:
        return extract_remote(text, self.client, source)


def extract_sample(sample: Sample, extractor) -> tuple[list[Triplet], list[ExtractionResult]]:
    """Run ``extractor`` on the claim and every evidence text.

    Returns the merged triplets (claim first, then evidence in order; first
    occurrence wins) and the per-text results.
    """
    results = [extractor.extract(sample.claim, sample, "claim")]
    results += [extractor.extract(t, sample, k) for k, t in enumerate(sample.evidence_texts)]
    merged: list[Triplet] = []
    seen = set()
    for res in results:
        for t in res.triplets:
            if t.key not in seen:
                seen.add(t.key)
                merged.append(t)
    return merged, results


def sample_graph(
    sample: Sample,
    triplets: Sequence[Triplet],
    embed,
    n_max: int = 20,
    mode: GraphMode | str = GraphMode.FULL,
) -> RelationGraph:
    return build_graph(sample.claim, sample.evidence_texts, triplets, embed, n_max, mode)


def build_graphs(samples: Sequence[Sample], extractor, embed, n_max: int = 20, mode=GraphMode.FULL):
    return [sample_graph(s, extract_sample(s, extractor)[0], embed, n_max, mode) for s in samples]
