import re

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skan.client import HttpJsonClient
from skan.embedding import HashedEmbedding, RemoteEncoder, fnv1a64, tokenize


def oracle_embed(text, dim, seed):
    """Independent restatement of the documented hashing scheme."""
    vec = [0.0] * dim
    for tok in re.findall(r"[^\W_]+", text.lower()):
        h = 0xCBF29CE484222325
        for b in tok.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) % (1 << 64)
        h ^= seed
        vec[h % dim] += -1.0 if h >= (1 << 63) else 1.0
    norm = sum(v * v for v in vec) ** 0.5
    return [v / norm for v in vec] if norm else vec


def test_fnv_known_vectors():
    # published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_ford_fusion_matches_oracle():
    emb = HashedEmbedding(dim=8, seed=42)
    got = emb.embed("ford fusion")
    assert got.shape == (8,)
    np.testing.assert_array_equal(got, np.array(oracle_embed("ford fusion", 8, 42)))


def test_empty_and_token_free_text_is_zero():
    emb = HashedEmbedding(16, 1)
    assert not emb.embed("").any()
    assert not emb.embed(" ,.;_ ").any()


def test_embed_is_deterministic_across_instances():
    a = HashedEmbedding(64, 42).embed("The park opened in 1843")
    b = HashedEmbedding(64, 42).embed("The park opened in 1843")
    np.testing.assert_array_equal(a, b)


def test_seed_changes_vectors():
    assert not np.array_equal(HashedEmbedding(64, 1).embed("ford"), HashedEmbedding(64, 2).embed("ford"))


def test_tokenize_lowercases_and_splits():
    assert tokenize("Ford-Fusion, 2006!") == ["ford", "fusion", "2006"]


@given(st.text(max_size=80), st.integers(1, 64), st.integers(0, 2**64 - 1))
@settings(max_examples=200)
def test_unit_or_zero_norm(text, dim, seed):
    v = HashedEmbedding(dim, seed).embed(text)
    n = np.linalg.norm(v)
    assert len(v) == dim
    if tokenize(text):
        assert abs(n - 1.0) <= 1e-6 or n == 0.0  # opposite signs may cancel
    else:
        assert n == 0.0


@given(st.lists(st.sampled_from(["ford", "fusion", "park", "1843", "opened", "ünïcode"]), min_size=1, max_size=8), st.randoms())
def test_token_order_does_not_matter(tokens, rnd):
    emb = HashedEmbedding(32, 7)
    shuffled = tokens[:]
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(emb.embed(" ".join(tokens)), emb.embed(" ".join(shuffled)), atol=1e-12)


@given(st.text(max_size=40))
@settings(max_examples=100)
def test_matches_oracle_on_random_text(text):
    np.testing.assert_allclose(HashedEmbedding(8, 42).embed(text), oracle_embed(text, 8, 42), atol=1e-12)


def test_remote_encoder_normalizes_and_memoizes(monkeypatch):
    monkeypatch.setenv("SKAN_EMBED_API_KEY", "k")
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0, 0.0]}]})

    http = HttpJsonClient("http://emb.test/v1/embeddings", "k", transport=httpx.MockTransport(handler))
    enc = RemoteEncoder("http://emb.test/v1/embeddings", 3, http=http)
    np.testing.assert_allclose(enc.embed("ford fusion"), [0.6, 0.8, 0.0])
    enc.embed("ford fusion")
    assert len(calls) == 1
    assert not enc.embed("").any()
    assert len(calls) == 1


def test_remote_encoder_rejects_wrong_width():
    transport = httpx.MockTransport(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0, 2.0]}]}))
    enc = RemoteEncoder("http://emb.test", 3, http=HttpJsonClient("http://emb.test", None, transport=transport))
    with pytest.raises(ValueError):
        enc.embed("x")
