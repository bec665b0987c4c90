from __future__ import annotations

import hashlib
import math
import re

import pytest
from hypothesis import given, strategies as st

from dytopo.embedding import (
    CachingEmbedder,
    HashingEmbedder,
    cosine_similarity,
    embed_descriptors,
    relevance_matrix,
)
from dytopo.errors import DimensionMismatch, EmbedderFailure
from dytopo.model import EmbeddingVector
from tests.conftest import make_output


# -- independent oracle ---------------------------------------------------------
# Plain-loop reimplementation of the bag-hashing scheme and of cosine; the
# fixture values frozen below were produced by running this standalone,
# before the package implementation existed.

def oracle_embed(text: str, dim: int = 64, seed: int = 0) -> list[float]:
    key = seed.to_bytes(8, "big")
    vec = [0.0] * dim
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
        h = int.from_bytes(digest, "big")
        index = (h >> 1) % dim
        vec[index] += 1.0 if h & 1 == 0 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec] if norm > 1e-12 else vec


def oracle_cosine(a: list[float], b: list[float]) -> float:
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a <= 1e-12 or norm_b <= 1e-12:
        return 0.0
    return max(-1.0, min(1.0, sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)))


MATH_TEAM_QUERIES = [
    "I need the problem statement to analyze.",
    "I need a problem analysis and solving plan.",
    "I need a detailed solution to verify.",
    "I need status updates from all team members.",
]
MATH_TEAM_KEYS = [
    "I provide problem analysis and solving plan.",
    "I provide detailed mathematical solutions with step-by-step derivations.",
    "I provide verification of mathematical solutions.",
    "I coordinate team efforts and set priorities.",
]


class TestHashingEmbedder:
    def test_deterministic_and_normalized(self):
        embedder = HashingEmbedder()
        first = embedder.embed("need tests")
        second = embedder.embed("need tests")
        assert first == second
        assert first.normalized
        assert abs(math.sqrt(sum(v * v for v in first.values)) - 1.0) < 1e-9

    def test_order_insensitive_bag(self):
        embedder = HashingEmbedder()
        assert embedder.embed("alpha beta gamma") == embedder.embed("gamma ALPHA beta")

    def test_empty_text_gives_zero_vector(self):
        vector = HashingEmbedder().embed("  ... !!")
        assert not vector.normalized
        assert all(v == 0.0 for v in vector.values)

    def test_matches_oracle_on_descriptor_texts(self):
        embedder = HashingEmbedder(dim=64, seed=0)
        for text in MATH_TEAM_QUERIES + MATH_TEAM_KEYS:
            assert list(embedder.embed(text).values) == oracle_embed(text)

    def test_seed_changes_embedding(self):
        base = HashingEmbedder(seed=0).embed("same words")
        other = HashingEmbedder(seed=7).embed("same words")
        assert base != other


class TestCosine:
    def test_identical_unit_vectors(self):
        v = EmbeddingVector(values=(1.0, 0.0, 0.0), normalized=True)
        assert cosine_similarity(v, v) == 1.0

    def test_orthogonal(self):
        a = EmbeddingVector(values=(1.0, 0.0))
        b = EmbeddingVector(values=(0.0, 1.0))
        assert cosine_similarity(a, b) == 0.0

    def test_antiparallel(self):
        a = EmbeddingVector(values=(1.0, 0.0))
        b = EmbeddingVector(values=(-1.0, 0.0))
        assert cosine_similarity(a, b) == -1.0

    def test_zero_norm_returns_zero(self):
        zero = EmbeddingVector(values=(0.0, 0.0))
        other = EmbeddingVector(values=(1.0, 1.0))
        assert cosine_similarity(zero, other) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(EmbeddingVector(values=(1.0,)), EmbeddingVector(values=(1.0, 0.0)))

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
    )
    def test_symmetry(self, a, b):
        size = min(len(a), len(b))
        va = EmbeddingVector(values=tuple(a[:size]))
        vb = EmbeddingVector(values=tuple(b[:size]))
        assert abs(cosine_similarity(va, vb) - cosine_similarity(vb, va)) <= 1e-12

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
    def test_self_similarity_is_one(self, values):
        vector = EmbeddingVector(values=tuple(values))
        norm = math.sqrt(sum(v * v for v in vector.values))
        if norm > 1e-6:
            assert abs(cosine_similarity(vector, vector) - 1.0) <= 1e-9

    @given(
        st.lists(st.floats(-5, 5), min_size=2, max_size=6),
        st.floats(0.01, 100.0),
    )
    def test_positive_scale_invariance(self, values, scale):
        vector = EmbeddingVector(values=tuple(values))
        norm = math.sqrt(sum(v * v for v in vector.values))
        if norm <= 1e-6:
            return
        scaled = EmbeddingVector(values=tuple(v * scale for v in values))
        other = EmbeddingVector(values=tuple(abs(v) + 0.5 for v in values))
        assert abs(
            cosine_similarity(vector, other) - cosine_similarity(scaled, other)
        ) <= 1e-9


class TestEmbedDescriptors:
    def test_identical_texts_yield_identical_rows(self):
        outputs = [make_output(i, 0, query="x", key="x") for i in range(2)]
        queries, keys = embed_descriptors(outputs, HashingEmbedder())
        assert queries == keys
        assert queries[0] == queries[1]

    def test_cross_agent_same_text_matches_exactly(self):
        outputs = [
            make_output(0, 0, query="need tests", key="offer code"),
            make_output(1, 0, query="need docs", key="need tests"),
        ]
        queries, keys = embed_descriptors(outputs, HashingEmbedder())
        assert queries[0] == keys[1]

    def test_matches_precomputed_team_fixture(self):
        # Frozen output of the standalone oracle on the four-role descriptor
        # texts: spot values plus a full matrix comparison.
        outputs = [
            make_output(i, 0, query=MATH_TEAM_QUERIES[i], key=MATH_TEAM_KEYS[i])
            for i in range(4)
        ]
        queries, keys = embed_descriptors(outputs, HashingEmbedder(dim=64, seed=0))
        matrix = relevance_matrix(queries, keys)
        assert matrix.score(consumer=1, provider=0) == pytest.approx(
            0.8432740427115679, abs=1e-12
        )
        assert matrix.score(consumer=2, provider=1) == pytest.approx(
            0.1010152544552211, abs=1e-12
        )
        assert matrix.score(consumer=0, provider=3) == pytest.approx(
            0.14285714285714288, abs=1e-12
        )
        oracle_q = [oracle_embed(text) for text in MATH_TEAM_QUERIES]
        oracle_k = [oracle_embed(text) for text in MATH_TEAM_KEYS]
        for i in range(4):
            for j in range(4):
                assert matrix.score(consumer=i, provider=j) == pytest.approx(
                    oracle_cosine(oracle_q[i], oracle_k[j]), abs=1e-12
                )

    def test_requires_sorted_outputs(self):
        outputs = [make_output(1, 0), make_output(0, 0)]
        with pytest.raises(ValueError):
            embed_descriptors(outputs, HashingEmbedder())

    def test_wraps_embedder_errors(self):
        class Exploding:
            def dimension(self):
                return 4

            def embed(self, text):
                raise RuntimeError("remote down")

        with pytest.raises(EmbedderFailure) as excinfo:
            embed_descriptors([make_output(0, 0)], Exploding())
        assert excinfo.value.agent_id == 0


class TestRelevanceMatrix:
    def test_orthonormal_rows_give_identity(self):
        rows = [
            EmbeddingVector(values=(1.0, 0.0, 0.0), normalized=True),
            EmbeddingVector(values=(0.0, 1.0, 0.0), normalized=True),
            EmbeddingVector(values=(0.0, 0.0, 1.0), normalized=True),
        ]
        matrix = relevance_matrix(rows, rows)
        for i in range(3):
            for j in range(3):
                assert matrix.score(consumer=i, provider=j) == (1.0 if i == j else 0.0)

    def test_single_agent_identical_pair(self):
        outputs = [make_output(0, 0, query="same words", key="same words")]
        queries, keys = embed_descriptors(outputs, HashingEmbedder())
        matrix = relevance_matrix(queries, keys)
        assert matrix.score(consumer=0, provider=0) == pytest.approx(1.0, abs=1e-9)

    def test_random_matrix_matches_naive_double_loop(self):
        import random

        rng = random.Random(42)
        queries = [
            EmbeddingVector(values=tuple(rng.uniform(-1, 1) for _ in range(8)))
            for _ in range(5)
        ]
        keys = [
            EmbeddingVector(values=tuple(rng.uniform(-1, 1) for _ in range(8)))
            for _ in range(5)
        ]
        matrix = relevance_matrix(queries, keys)
        for i in range(5):
            for j in range(5):
                expected = oracle_cosine(list(queries[i].values), list(keys[j].values))
                assert matrix.score(consumer=i, provider=j) == pytest.approx(
                    expected, abs=1e-12
                )

    def test_diagonal_is_computed(self):
        outputs = [
            make_output(0, 0, query="alpha beta", key="alpha beta"),
            make_output(1, 0, query="gamma", key="delta"),
        ]
        queries, keys = embed_descriptors(outputs, HashingEmbedder())
        matrix = relevance_matrix(queries, keys)
        assert matrix.score(consumer=0, provider=0) == pytest.approx(1.0, abs=1e-9)


class TestCachingEmbedder:
    def test_caches_by_exact_text(self):
        calls = []

        class Counting:
            def dimension(self):
                return 4

            def embed(self, text):
                calls.append(text)
                return EmbeddingVector(values=(1.0, 0.0, 0.0, 0.0), normalized=True)

        cache = CachingEmbedder(Counting())
        cache.embed("abc")
        cache.embed("abc")
        cache.embed("abc ")  # different key: exact text
        assert calls == ["abc", "abc "]

    def test_concurrent_inserts_are_safe(self):
        import threading

        embedder = CachingEmbedder(HashingEmbedder())
        results = []

        def worker():
            results.append(embedder.embed("shared text"))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert all(result == results[0] for result in results)
