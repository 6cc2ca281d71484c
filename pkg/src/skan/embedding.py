"""Text feature vectors for graph nodes and edges.

Two providers share one interface (``dim``, ``embed``, ``fingerprint``):

* :class:`HashedEmbedding` -- deterministic signed feature hashing over a
  bag of lowercase alphanumeric tokens. Offline default.
* :class:`RemoteEncoder` -- posts texts to an embedding endpoint and
  L2-normalizes whatever vector comes back.

Hash scheme (bit-exact, so other languages can reproduce it)::

    h      = FNV-1a-64(utf8(token)) XOR seed
    bucket = h mod dim
    sign   = -1 if bit 63 of h is set else +1
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from functools import lru_cache

import numpy as np

from .client import HttpJsonClient

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


class HashedEmbedding:
    """Signed feature hashing of a token bag, L2-normalized.

    Token order is irrelevant and empty (token-free) text maps to the zero
    vector.
    """

    kind = "hashed"

    def __init__(self, dim: int = 64, seed: int = 42):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed) & _MASK64
        self._embed_cached = lru_cache(maxsize=65536)(self._embed)

    def token_slot(self, token: str) -> tuple[int, float]:
        h = fnv1a64(token.encode("utf-8")) ^ self.seed
        return h % self.dim, (-1.0 if h >> 63 else 1.0)

    def _embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            bucket, sign = self.token_slot(tok)
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        vec.setflags(write=False)
        return vec

    def embed(self, text: str) -> np.ndarray:
        return self._embed_cached(text)

    def embed_many(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])

    def fingerprint(self) -> str:
        return f"hashed-fnv1a64:dim={self.dim}:seed={self.seed}"


class RemoteEncoder:
    """Embedding service client.

    The endpoint receives ``{"model": ..., "input": [text]}`` and must answer
    with ``{"data": [{"embedding": [...]}]}``; the service does the pooling.
    The returned vector is L2-normalized here. Empty text short-circuits to
    zeros without a request.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        dim: int,
        model: str = "deberta-v3-base",
        api_key_env: str = "SKAN_EMBED_API_KEY",
        timeout: float = 60.0,
        http: HttpJsonClient | None = None,
    ):
        self.endpoint = endpoint
        self.dim = int(dim)
        self.model = model
        self.http = http or HttpJsonClient(
            endpoint, api_key=os.environ.get(api_key_env), timeout=timeout
        )
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        if not tokenize(text):
            return np.zeros(self.dim)
        if text in self._memo:
            return self._memo[text]
        body = self.http.post({"model": self.model, "input": [text]})
        try:
            vec = np.asarray(body["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError) as exc:
            raise ValueError(f"unexpected embedding response: {json.dumps(body)[:200]}") from exc
        if vec.shape != (self.dim,):
            raise ValueError(f"embedding has shape {vec.shape}, expected ({self.dim},)")
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
        vec.setflags(write=False)
        self._memo[text] = vec
        return vec

    def embed_many(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.embed(t) for t in texts])

    def fingerprint(self) -> str:
        key = f"{self.endpoint}|{self.model}|{self.dim}"
        return "remote:" + hashlib.sha256(key.encode()).hexdigest()[:16]
