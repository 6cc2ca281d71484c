"""Content-addressed cache for per-sample pipeline artifacts.

Layout under the cache root::

    <root>/<stage>/<key[:2]>/<key>.json      one artifact per sample
    <root>/manifest-<stage>.json             hits/misses of the latest run

``stage`` is ``triplets`` (merged triplets plus the per-text extraction
results) or ``graphs`` (a serialized :class:`RelationGraph`). ``key`` is the
SHA-256 of the stage, sample id, extractor fingerprint, embedding fingerprint
and, for graphs, the graph settings. Every file is written to a temporary
name and renamed into place. An unreadable artifact is recomputed and
overwritten, with a warning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .extractor import ExtractionResult, MalformedSpan, Triplet
from .graph import GraphMode, RelationGraph, build_graph

log = logging.getLogger(__name__)

STAGES = ("triplets", "graphs")


def artifact_key(stage: str, sample_id: str, extractor_fp: str, embed_fp: str, extra: str = "") -> str:
    if stage not in STAGES:
        raise ValueError(f"unknown cache stage {stage!r}")
    blob = json.dumps([stage, sample_id, extractor_fp, embed_fp, extra])
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


@dataclass
class Manifest:
    stage: str
    extractor: str
    embedding: str
    hits: list[str] = field(default_factory=list)
    misses: list[str] = field(default_factory=list)
    rebuilt: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "extractor": self.extractor,
            "embedding": self.embedding,
            "hits": self.hits,
            "misses": self.misses,
            "rebuilt": self.rebuilt,
        }


class ArtifactCache:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, stage: str, key: str) -> Path:
        return self.root / stage / key[:2] / f"{key}.json"

    def get_or_compute(self, stage: str, key: str, compute: Callable[[], dict], manifest: Manifest, sid: str) -> dict:
        p = self.path(stage, key)
        if p.exists():
            try:
                doc = json.loads(p.read_text(encoding="utf-8"))
                if doc.get("key") != key:
                    raise ValueError("key mismatch")
                manifest.hits.append(sid)
                return doc["artifact"]
            except (ValueError, KeyError, OSError, TypeError) as exc:
                log.warning("cache entry %s is corrupt (%s); rebuilding", p, exc)
                manifest.rebuilt.append(sid)
        manifest.misses.append(sid)
        artifact = compute()
        atomic_write_text(p, json.dumps({"key": key, "artifact": artifact}, ensure_ascii=False, sort_keys=True))
        return artifact

    def write_manifest(self, manifest: Manifest) -> Path:
        p = self.root / f"manifest-{manifest.stage}.json"
        atomic_write_text(p, json.dumps(manifest.to_json(), indent=2, sort_keys=True))
        return p


def _result_to_json(r: ExtractionResult) -> dict:
    return {
        "triplets": [[t.head, t.relation, t.tail] for t in r.triplets],
        "raw_response": r.raw_response,
        "malformed_spans": [list(m) for m in r.malformed_spans],
    }


def _result_from_json(doc: dict, source) -> ExtractionResult:
    return ExtractionResult(
        triplets=[Triplet(h, r, t, source) for h, r, t in doc["triplets"]],
        raw_response=doc["raw_response"],
        malformed_spans=[MalformedSpan(*m) for m in doc["malformed_spans"]],
    )


def cached_triplets(samples, extractor, cache: ArtifactCache, embed_fp: str = ""):
    """Extraction with caching. Returns ``(per-sample (merged, results), manifest)``.

    The triplet stage does not depend on the embedding, so ``embed_fp`` is
    normally left empty for it.
    """
    from .pipeline import extract_sample

    manifest = Manifest("triplets", extractor.fingerprint(), embed_fp)
    out = []
    for s in samples:
        key = artifact_key("triplets", s.id, manifest.extractor, embed_fp)

        def compute(s=s):
            merged, results = extract_sample(s, extractor)
            return {"merged": [[t.head, t.relation, t.tail, t.source] for t in merged],
                    "results": [_result_to_json(r) for r in results]}

        doc = cache.get_or_compute("triplets", key, compute, manifest, s.id)
        merged = [Triplet(h, r, t, src) for h, r, t, src in doc["merged"]]
        sources = ["claim"] + list(range(len(s.evidence)))
        results = [_result_from_json(r, src) for r, src in zip(doc["results"], sources)]
        out.append((merged, results))
    cache.write_manifest(manifest)
    return out, manifest


def cached_graphs(
    samples: Sequence,
    triplets: Sequence[Sequence[Triplet]],
    extractor_fp: str,
    embed,
    cache: ArtifactCache,
    n_max: int = 20,
    mode: GraphMode | str = GraphMode.FULL,
):
    """Graph building with caching. Returns ``(graphs, manifest)``."""
    mode = GraphMode(mode)
    manifest = Manifest("graphs", extractor_fp, embed.fingerprint())
    graphs = []
    for s, trips in zip(samples, triplets):
        key = artifact_key("graphs", s.id, extractor_fp, manifest.embedding, f"{n_max}:{mode.value}")

        def compute(s=s, trips=trips):
            g = build_graph(s.claim, s.evidence_texts, trips, embed, n_max, mode)
            return g.to_json(include_features=True)

        graphs.append(RelationGraph.from_json(cache.get_or_compute("graphs", key, compute, manifest, s.id)))
    cache.write_manifest(manifest)
    return graphs, manifest
