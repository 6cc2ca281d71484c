"""Datasets: FEVER/HOVER-style loaders, the native JSONL format and a
synthetic multi-hop corpus generator.

Native JSONL, one object per line::

    {
      "id": "syn-7-000001",                      # unique within the file
      "claim": "...",
      "evidence": [{"id": "syn-7-000001-0", "text": "..."}, ...],
      "label": "Supported",                      # a label of the active set
      "gold_triplets": [["head", "relation", "tail"], ...] | null,
      "evidence_gold_ids": ["syn-7-000001-0", ...] | null
    }
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .extractor import Triplet

log = logging.getLogger(__name__)

LABEL_ALIASES = {
    "supports": "Supported",
    "supported": "Supported",
    "refutes": "Refuted",
    "refuted": "Refuted",
    "not enough info": "NEI",
    "nei": "NEI",
    "not_enough_info": "NEI",
    "not_supported": "Not-Supported",
    "not-supported": "Not-Supported",
    "not supported": "Not-Supported",
}
MAX_MALFORMED_FRACTION = 0.10


class DatasetFormatError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    claim: str
    evidence: list[tuple[str, str]]
    label: str
    gold_triplets: list[Triplet] | None = None
    evidence_gold_ids: list[str] | None = None

    @property
    def evidence_texts(self) -> list[str]:
        return [t for _, t in self.evidence]

    @property
    def evidence_ids(self) -> list[str]:
        return [i for i, _ in self.evidence]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "claim": self.claim,
            "evidence": [{"id": i, "text": t} for i, t in self.evidence],
            "label": self.label,
            "gold_triplets": None
            if self.gold_triplets is None
            else [[t.head, t.relation, t.tail] for t in self.gold_triplets],
            "evidence_gold_ids": self.evidence_gold_ids,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Sample":
        gold = obj.get("gold_triplets")
        return cls(
            id=str(obj["id"]),
            claim=str(obj["claim"]),
            evidence=[(str(e["id"]), str(e["text"])) for e in obj.get("evidence", [])],
            label=str(obj["label"]),
            gold_triplets=None if gold is None else [Triplet(*g) for g in gold],
            evidence_gold_ids=obj.get("evidence_gold_ids"),
        )


@dataclass
class LoadReport:
    path: str
    loaded: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)


def canonical_label(raw: str, label_set: Sequence[str] | None = None) -> str:
    label = LABEL_ALIASES.get(str(raw).strip().lower(), str(raw).strip())
    if label_set is not None and label not in label_set:
        # two-way sets fold anything that is not support into the negative class
        if tuple(label_set) == ("Supported", "Not-Supported") and label in ("Refuted", "NEI"):
            return "Not-Supported"
        raise ValueError(f"label {raw!r} is not in {list(label_set)}")
    return label


def _evidence_items(raw, sid: str) -> list[tuple[str, str]]:
    out = []
    for k, item in enumerate(raw or []):
        if isinstance(item, str):
            out.append((f"{sid}-{k}", item))
        elif isinstance(item, dict):
            out.append((str(item.get("id", f"{sid}-{k}")), str(item["text"])))
        elif isinstance(item, (list, tuple)) and len(item) >= 3:
            # [title, sentence_id, text, ...]
            out.append((f"{item[0]}_{item[1]}", str(item[2])))
        else:
            raise ValueError(f"unrecognized evidence item {item!r}")
    return out


def _gold_ids(obj: dict) -> list[str] | None:
    if obj.get("evidence_gold_ids") is not None:
        return [str(x) for x in obj["evidence_gold_ids"]]
    if obj.get("supporting_facts"):
        return [f"{t}_{s}" for t, s in obj["supporting_facts"]]
    if obj.get("gold_evidence"):
        ids = []
        for group in obj["gold_evidence"]:
            for ann in group:
                # FEVER annotation: [annotation_id, evidence_id, page, line]
                if len(ann) >= 4 and ann[2] is not None:
                    ids.append(f"{ann[2]}_{ann[3]}")
        return sorted(set(ids))
    return None


def _parse_line(obj: dict, fmt: str, label_set) -> Sample:
    if fmt == "native_jsonl":
        s = Sample.from_json(obj)
        s.label = canonical_label(s.label, label_set)
        return s
    sid = str(obj.get("id", obj.get("uid")))
    if sid == "None":
        raise KeyError("id")
    return Sample(
        id=sid,
        claim=str(obj["claim"]),
        evidence=_evidence_items(obj.get("evidence"), sid),
        label=canonical_label(obj["label"], label_set),
        evidence_gold_ids=_gold_ids(obj),
    )


def load_dataset(path, fmt: str = "native_jsonl", label_set: Sequence[str] | None = None):
    """Read one JSON object per line. Returns ``(samples, LoadReport)``.

    ``fmt`` is ``native_jsonl``, ``fever_jsonl`` or ``hover_jsonl``. Bad lines
    are skipped and listed in the report; more than 10% bad lines raises
    :class:`DatasetFormatError`.
    """
    if fmt not in ("native_jsonl", "fever_jsonl", "hover_jsonl"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    report = LoadReport(str(path))
    samples = []
    seen = set()
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                s = _parse_line(json.loads(line), fmt, label_set)
                if s.id in seen:
                    raise ValueError(f"duplicate id {s.id!r}")
            except (ValueError, KeyError, TypeError) as exc:
                report.skipped.append((lineno, f"{type(exc).__name__}: {exc}"))
                continue
            seen.add(s.id)
            samples.append(s)
    report.loaded = len(samples)
    if total and len(report.skipped) / total > MAX_MALFORMED_FRACTION:
        raise DatasetFormatError(
            f"{path}: {len(report.skipped)} of {total} lines malformed "
            f"(first at line {report.skipped[0][0]}: {report.skipped[0][1]})"
        )
    for lineno, why in report.skipped:
        log.warning("%s:%d skipped: %s", path, lineno, why)
    return samples, report


def dumps_native(samples: Sequence[Sample]) -> str:
    return "".join(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for s in samples)


def save_native(samples: Sequence[Sample], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_native(samples), encoding="utf-8")
    tmp.replace(path)


# -- synthetic corpus ----------------------------------------------------------

RELATIONS = (
    "was founded by",
    "is located in",
    "is married to",
    "was designed by",
    "is a member of",
    "was born in",
    "works for",
    "is owned by",
    "was written by",
    "is the capital of",
    "plays for",
    "was directed by",
    "is a student of",
    "was named after",
    "is the parent of",
    "competed against",
    "was built by",
    "is governed by",
    "was produced by",
    "is a neighbour of",
    "was painted by",
    "is coached by",
    "was discovered by",
    "is adjacent to",
    "was acquired by",
    "is sponsored by",
    "was elected in",
    "is published by",
    "was trained by",
    "is hosted by",
)
EVIDENCE_TEMPLATES = ("Records show that {a} {r} {b}.",)
CLAIM_TEMPLATE = "It is claimed that {chain}."
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 100
    hops: int = 2
    entity_vocab_size: int = 3000
    relation_vocab_size: int = 20
    seed: int = 7
    distractor_evidence_per_sample: int = 1
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.hops < 2:
            raise ValueError("hops must be >= 2")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not 1 <= self.relation_vocab_size <= len(RELATIONS):
            raise ValueError(f"relation_vocab_size must lie in [1, {len(RELATIONS)}]")
        need = self.hops + 1 + 2 * self.distractor_evidence_per_sample
        if self.entity_vocab_size < need:
            raise ValueError(f"entity_vocab_size must be >= {need}")
        if self.distractor_evidence_per_sample < 0:
            raise ValueError("distractor_evidence_per_sample must be >= 0")


def _entity_vocab(size: int, rng: np.random.Generator) -> list[str]:
    template_text = " ".join(EVIDENCE_TEMPLATES + (CLAIM_TEMPLATE, "which") + RELATIONS).lower()
    names: list[str] = []
    seen = set()
    while len(names) < size:
        syl = rng.integers(0, [len(_ONSETS), len(_VOWELS)] * 3)
        name = "".join(_ONSETS[syl[2 * k]] + _VOWELS[syl[2 * k + 1]] for k in range(3))
        if name in seen or name in template_text:
            continue
        seen.add(name)
        names.append(name.capitalize())
    return names


def generate_synthetic(spec: SyntheticSpec) -> list[Sample]:
    """Chain-of-relations claims with exactly balanced labels.

    Each sample hides a chain ``e0 -r1-> e1 ... -rh-> eh`` in its evidence,
    one sentence per link, plus distractor sentences about unrelated
    entities. The claim restates the whole chain, so it asserts how ``e0``
    relates to ``eh`` through the bridge entities. For Not-Supported samples
    the bridge entity at the head of one later link is swapped with the head
    entity of a distractor sentence: the evidence no longer connects ``e0``
    to ``eh``, yet the multiset of evidence tokens is unchanged.

    ``gold_triplets`` holds the claim's links followed by every evidence
    sentence's link, without repeats, so oracle extraction is exact on every
    text. ``evidence_gold_ids`` lists the chain sentences.
    """
    rng = np.random.default_rng(spec.seed)
    vocab = _entity_vocab(spec.entity_vocab_size, rng)
    relations = RELATIONS[: spec.relation_vocab_size]
    labels = np.array(["Supported", "Not-Supported"] * ((spec.n_samples + 1) // 2))[: spec.n_samples]
    labels = labels[rng.permutation(spec.n_samples)]

    samples = []
    n_dis = spec.distractor_evidence_per_sample
    for k in range(spec.n_samples):
        sid = f"{spec.id_prefix}-{spec.seed}-{k:06d}"
        picks = rng.choice(len(vocab), size=spec.hops + 1 + 2 * n_dis + 1, replace=False)
        ents = [vocab[p] for p in picks]
        chain = ents[: spec.hops + 1]
        spare = ents[-1]
        rels = [relations[r] for r in rng.integers(0, len(relations), size=spec.hops + n_dis)]
        links = [[chain[j], rels[j], chain[j + 1]] for j in range(spec.hops)]
        dis = [
            [ents[spec.hops + 1 + 2 * q], rels[spec.hops + q], ents[spec.hops + 2 + 2 * q]]
            for q in range(n_dis)
        ]
        label = str(labels[k])
        if label == "Not-Supported":
            j = int(rng.integers(1, spec.hops))  # bridge entity chain[j], at the head of link j
            if dis:
                links[j][0], dis[0][0] = dis[0][0], links[j][0]
            else:
                links[j][0] = spare
        rendered = links + dis
        is_chain = [True] * len(links) + [False] * len(dis)
        order = rng.permutation(len(rendered))
        tmpl = rng.integers(0, len(EVIDENCE_TEMPLATES), size=len(rendered))
        evidence, gold_ids = [], []
        for pos, r in enumerate(order):
            a, rel, b = rendered[r]
            eid = f"{sid}-{pos}"
            evidence.append((eid, EVIDENCE_TEMPLATES[tmpl[pos]].format(a=a, r=rel, b=b)))
            if is_chain[r]:
                gold_ids.append(eid)
        claimed = [[chain[j], rels[j], chain[j + 1]] for j in range(spec.hops)]
        text = f"{chain[0]} {rels[0]} {chain[1]}"
        for j in range(1, spec.hops):
            text += f", which {rels[j]} {chain[j + 1]}"
        claim = CLAIM_TEMPLATE.format(chain=text)
        gold = [Triplet(*c) for c in claimed]
        gold += [Triplet(a, r, b) for a, r, b in (rendered[i] for i in order)]
        samples.append(
            Sample(
                id=sid,
                claim=claim,
                evidence=evidence,
                label=label,
                gold_triplets=list(dict.fromkeys(gold)),
                evidence_gold_ids=gold_ids,
            )
        )
    return samples
