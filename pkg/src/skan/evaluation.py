"""Accuracy, FEVER score and report formatting."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

EVIDENCE_SLOTS = 5


def _check_aligned(*seqs):
    n = len(seqs[0])
    if any(len(s) != n for s in seqs):
        raise ValueError(f"misaligned inputs: lengths {[len(s) for s in seqs]}")
    if n == 0:
        raise ValueError("cannot score an empty prediction set")


def accuracy(predictions: Sequence, gold: Sequence) -> float:
    _check_aligned(predictions, gold)
    return sum(p == g for p, g in zip(predictions, gold)) / len(gold)


def fever_score(predictions: Sequence, gold: Sequence, evidence_ok: Sequence[bool]) -> float:
    """Fraction of samples with the right label *and* acceptable evidence."""
    _check_aligned(predictions, gold, evidence_ok)
    return sum(bool(ok) and p == g for p, g, ok in zip(predictions, gold, evidence_ok)) / len(gold)


def evidence_ok_from_attention(
    scores: Sequence[float],
    evidence_ids: Sequence[str],
    gold_ids: Sequence[str] | None,
    k: int = EVIDENCE_SLOTS,
    label: str | None = None,
) -> bool:
    """True iff every gold evidence id is among the ``k`` highest-scored pieces.

    Ties keep input order. NEI samples and samples without gold evidence are
    always acceptable.
    """
    if label == "NEI" or not gold_ids:
        return True
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
    chosen = {evidence_ids[i] for i in order}
    return set(gold_ids) <= chosen


@dataclass
class EvalReport:
    accuracy: float
    fever_score: float
    n: int
    per_class: dict[str, dict[str, int]]
    evidence_source: str
    config_fingerprint: str
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("metric", "value"), ("n", str(self.n)),
                ("accuracy", f"{self.accuracy:.4f}"), ("fever_score", f"{self.fever_score:.4f}"),
                ("evidence", self.evidence_source)]
        for label, c in sorted(self.per_class.items()):
            rows.append((f"{label} (gold/pred/correct)", f"{c['gold']}/{c['predicted']}/{c['correct']}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows)


def per_class_counts(predictions, gold, labels) -> dict[str, dict[str, int]]:
    g, p = Counter(gold), Counter(predictions)
    correct = Counter(x for x, y in zip(predictions, gold) if x == y)
    return {lab: {"gold": g[lab], "predicted": p[lab], "correct": correct[lab]} for lab in labels}


def fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def make_report(predictions, gold, evidence_ok, labels, evidence_source: str, config: dict) -> EvalReport:
    return EvalReport(
        accuracy=accuracy(predictions, gold),
        fever_score=fever_score(predictions, gold, evidence_ok),
        n=len(gold),
        per_class=per_class_counts(predictions, gold, labels),
        evidence_source=evidence_source,
        config_fingerprint=fingerprint(config),
    )


def paired_ablation(reports: dict[str, EvalReport]) -> str:
    """Side-by-side accuracy/FEVER table for several runs on the same data."""
    width = max(len(k) for k in reports) if reports else 4
    lines = [f"{'mode'.ljust(width)}  accuracy  fever"]
    for name, r in reports.items():
        lines.append(f"{name.ljust(width)}  {r.accuracy:8.4f}  {r.fever_score:.4f}")
    return "\n".join(lines)


def random_prediction_sets(rng: np.random.Generator, n: int, labels: Sequence[str]):
    """Helper for property tests: random (pred, gold, evidence_ok) triple."""
    pred = list(rng.choice(labels, size=n))
    gold = list(rng.choice(labels, size=n))
    ok = list(rng.random(n) < 0.5)
    return pred, gold, ok
