"""Entity-relation-entity triplet extraction.

The remote path sends a fixed prompt to a chat-completion endpoint and parses
``(head, relation, tail)`` tuples out of whatever free text comes back. The
oracle path returns gold triplets that are visible in the text, which keeps
the rest of the pipeline testable offline.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .client import HttpJsonClient, TransportError

PROMPT_TEMPLATE = (
    "Please extract entities in the given text and the relations between entities. "
    "Let's think step by step. Please return in this form: (entity, relation, entity). "
    "Here is the text: [TEXT]."
)
PLACEHOLDER = "[TEXT]"

CONFIDENCE_EPS = 1e-7

_WS_RE = re.compile(r"\s+")
_STRIP_CHARS = " \t\r\n\"'`.“”‘’"
_TUPLE_RE = re.compile(r"\(([^()]*)\)")


def normalize_text(text: str) -> str:
    """Collapse whitespace and strip surrounding quotes/periods; keeps casing."""
    text = _WS_RE.sub(" ", text)
    prev = None
    while prev != text:
        prev = text
        text = text.strip(_STRIP_CHARS)
    return text


def norm_key(text: str) -> str:
    """Equality key: normalized and lowercased."""
    return normalize_text(text).lower()


@dataclass(frozen=True, eq=False)
class Triplet:
    """One extracted fact. Equality and hashing ignore casing and ``source``.

    ``source`` is ``"claim"``, an evidence index, or ``None`` when unknown.
    """

    head: str
    relation: str
    tail: str
    source: str | int | None = None

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            object.__setattr__(self, name, normalize_text(getattr(self, name)))
        if not (self.head and self.relation and self.tail):
            raise ValueError(f"triplet fields must be non-empty: {self!r}")
        if norm_key(self.head) == norm_key(self.tail):
            raise ValueError(f"self-relation rejected: {self!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head.lower(), self.relation.lower(), self.tail.lower())

    def __eq__(self, other):
        if not isinstance(other, Triplet):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def format(self) -> str:
        return f"({self.head}, {self.relation}, {self.tail})"

    def with_source(self, source) -> "Triplet":
        return Triplet(self.head, self.relation, self.tail, source)


class MalformedSpan(NamedTuple):
    offset: int
    length: int
    reason: str


@dataclass
class ExtractionResult:
    triplets: list[Triplet]
    raw_response: str
    malformed_spans: list[MalformedSpan] = field(default_factory=list)


@dataclass(frozen=True)
class ExtractorScore:
    loss: float
    matched: int
    extracted: int
    gold: int


def build_prompt(text: str) -> str:
    if not text:
        raise ValueError("cannot build a prompt for empty text")
    head, tail = PROMPT_TEMPLATE.split(PLACEHOLDER)
    return head + text + tail


def parse_triplets(raw) -> tuple[list[Triplet], list[MalformedSpan]]:
    """Pull every innermost ``( ... )`` group out of ``raw``.

    Groups with three non-empty fields and distinct head/tail become
    triplets; anything else parenthesized is reported as a malformed span
    with a reason (``field-count``, ``empty-field``, ``head-equals-tail``,
    ``duplicate``). Text outside parentheses is ignored. Never raises.
    """
    if isinstance(raw, (bytes, bytearray)):
        raw = raw.decode("utf-8", errors="replace")
    triplets: list[Triplet] = []
    spans: list[MalformedSpan] = []
    seen: set[tuple[str, str, str]] = set()
    for m in _TUPLE_RE.finditer(raw):
        start, length = m.start(), m.end() - m.start()
        fields = [normalize_text(f) for f in m.group(1).split(",")]
        if len(fields) != 3:
            spans.append(MalformedSpan(start, length, "field-count"))
            continue
        if not all(fields):
            spans.append(MalformedSpan(start, length, "empty-field"))
            continue
        if fields[0].lower() == fields[2].lower():
            spans.append(MalformedSpan(start, length, "head-equals-tail"))
            continue
        trip = Triplet(*fields)
        if trip.key in seen:
            spans.append(MalformedSpan(start, length, "duplicate"))
            continue
        seen.add(trip.key)
        triplets.append(trip)
    return triplets, spans


def format_triplets(triplets: Iterable[Triplet]) -> str:
    return "".join(t.format() + "\n" for t in triplets)


def write_triplets(path, triplets: Iterable[Triplet]) -> None:
    Path(path).write_text(format_triplets(triplets), encoding="utf-8")


def read_triplets(path) -> list[Triplet]:
    return parse_triplets(Path(path).read_text(encoding="utf-8"))[0]


def extract_oracle(text: str, gold: Sequence[Triplet], source=None) -> ExtractionResult:
    """Gold triplets whose head and tail both occur in ``text`` (case-insensitive)."""
    low = text.lower()
    found = []
    seen = set()
    for t in gold:
        if t.head.lower() in low and t.tail.lower() in low and t.key not in seen:
            seen.add(t.key)
            found.append(t.with_source(source))
    return ExtractionResult(found, format_triplets(found), [])


class LLMClient:
    """Chat-completion client used by :func:`extract_remote`.

    The API key is read from the environment variable named by
    ``api_key_env``; it is never accepted as an argument or config value.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        path: str = "/v1/chat/completions",
        temperature: float = 0.0,
        timeout: float = 60.0,
        api_key_env: str = "SKAN_LLM_API_KEY",
        max_in_flight: int = 4,
        **http_kwargs,
    ):
        self.model = model
        self.temperature = temperature
        self.http = HttpJsonClient(
            base_url.rstrip("/") + path,
            api_key=os.environ.get(api_key_env),
            timeout=timeout,
            max_in_flight=max_in_flight,
            **http_kwargs,
        )

    def complete(self, prompt: str) -> str:
        body = self.http.post(
            {
                "model": self.model,
                "temperature": self.temperature,
                "messages": [{"role": "user", "content": prompt}],
            }
        )
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            # not a chat-completion payload; let the caller record it verbatim
            return json.dumps(body, sort_keys=True)

    def fingerprint(self) -> str:
        return f"llm:{self.http.url}:{self.model}:t={self.temperature}"


def extract_remote(text: str, client: LLMClient, source=None) -> ExtractionResult:
    """Run the extraction prompt through ``client``.

    Transport failures propagate as :class:`TransportError`; an answer with
    no parseable tuple is not an error and comes back with empty triplets and
    a span covering the whole response.
    """
    raw = client.complete(build_prompt(text))
    if not isinstance(raw, str):
        raw = str(raw)
    triplets, spans = parse_triplets(raw)
    if not triplets and not spans and raw:
        spans = [MalformedSpan(0, len(raw), "no-tuple")]
    return ExtractionResult([t.with_source(source) for t in triplets], raw, spans)


def score_extraction(
    extracted: Sequence[Triplet],
    gold: Sequence[Triplet],
    confidences: Sequence[float] | None = None,
) -> ExtractorScore:
    """Binary negative log-likelihood of extraction correctness.

    A triplet counts as correct when it is in ``gold`` under normalized
    equality. Missing confidences default to 1.0. Confidences are clamped to
    ``[1e-7, 1 - 1e-7]`` before taking logs.
    """
    if confidences is None:
        confidences = [1.0] * len(extracted)
    if len(confidences) != len(extracted):
        raise ValueError(
            f"{len(confidences)} confidences for {len(extracted)} extracted triplets"
        )
    gold_keys = {t.key for t in gold}
    loss = 0.0
    matched = 0
    for trip, c in zip(extracted, confidences):
        if not 0.0 < c <= 1.0:
            raise ValueError(f"confidence must lie in (0, 1], got {c}")
        c = min(max(c, CONFIDENCE_EPS), 1.0 - CONFIDENCE_EPS)
        if trip.key in gold_keys:
            matched += 1
            loss -= math.log(c)
        else:
            loss -= math.log(1.0 - c)
    return ExtractorScore(loss, matched, len(extracted), len(gold))


__all__ = [
    "PROMPT_TEMPLATE",
    "Triplet",
    "MalformedSpan",
    "ExtractionResult",
    "ExtractorScore",
    "LLMClient",
    "TransportError",
    "build_prompt",
    "parse_triplets",
    "format_triplets",
    "read_triplets",
    "write_triplets",
    "extract_oracle",
    "extract_remote",
    "score_extraction",
    "normalize_text",
    "norm_key",
]
