"""Descriptor embedding and relevance scoring.

The engine only ever sees the small ``Embedder`` surface, so the offline
hashing embedder and any remote sentence encoder are interchangeable. The
hashing embedder is the default for reproducible runs: it is deterministic
across platforms, needs no model weights, and still gives meaningful token
overlap similarity.
"""

from __future__ import annotations

import math
import re
import threading
from hashlib import blake2b
from typing import Protocol, Sequence

from dytopo.errors import DimensionMismatch, EmbedderFailure
from dytopo.model import EmbeddingVector, RelevanceMatrix, RoundOutput

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_ZERO_NORM = 1e-12


class Embedder(Protocol):
    """Maps descriptor text to a fixed-dimension vector.

    Implementations must be deterministic within a run: identical text
    yields identical vectors.
    """

    def embed(self, text: str) -> EmbeddingVector: ...

    def dimension(self) -> int: ...


class HashingEmbedder:
    """Signed feature-hashing bag-of-tokens embedder.

    Text is lowercased and split on non-alphanumeric characters; each token
    is hashed to a bucket in ``0..d-1`` and a sign in {-1, +1}, counts are
    accumulated, and the result is l2-normalized. Output depends only on
    the multiset of tokens. Empty-after-tokenization text yields the zero
    vector (flagged unnormalized), which scores 0 against everything.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self._dim = dim
        self._key = seed.to_bytes(8, "big", signed=False)

    def dimension(self) -> int:
        return self._dim

    def _bucket(self, token: str) -> tuple[int, float]:
        digest = blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        h = int.from_bytes(digest, "big")
        index = (h >> 1) % self._dim
        sign = 1.0 if h & 1 == 0 else -1.0
        return index, sign

    def embed(self, text: str) -> EmbeddingVector:
        values = [0.0] * self._dim
        for token in _TOKEN_RE.findall(text.lower()):
            index, sign = self._bucket(token)
            values[index] += sign
        norm = math.sqrt(sum(v * v for v in values))
        if norm <= _ZERO_NORM:
            return EmbeddingVector(values=tuple(0.0 for _ in values), normalized=False)
        return EmbeddingVector(values=tuple(v / norm for v in values), normalized=True)


class CachingEmbedder:
    """Per-run cache keyed by exact text.

    Descriptors repeat across rounds; caching keeps embedding cost
    negligible. Safe under concurrent insertion: values for identical keys
    are identical by determinism, so last-write-wins is harmless.
    """

    def __init__(self, inner: Embedder):
        self._inner = inner
        self._cache: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def dimension(self) -> int:
        return self._inner.dimension()

    def embed(self, text: str) -> EmbeddingVector:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        vector = self._inner.embed(text)
        with self._lock:
            self._cache[text] = vector
        return vector


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Zero-norm inputs score 0: cosine is undefined at the origin and 0 is
    the neutral "no evidence of alignment" value, so no edge forms under
    any positive threshold.
    """
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions {a.dimension} and {b.dimension} differ")
    norm_a = math.sqrt(sum(v * v for v in a.values))
    norm_b = math.sqrt(sum(v * v for v in b.values))
    if norm_a <= _ZERO_NORM or norm_b <= _ZERO_NORM:
        return 0.0
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


def embed_descriptors(
    outputs: Sequence[RoundOutput], embedder: Embedder
) -> tuple[tuple[EmbeddingVector, ...], tuple[EmbeddingVector, ...]]:
    """Embed every agent's query and key descriptors into (Q, K) rows.

    Row ``i`` of Q embeds agent ``i``'s query; row ``i`` of K its key.
    Outputs must arrive sorted by agent id so row order matches ids.
    """
    ids = [output.author_id for output in outputs]
    if ids != sorted(ids):
        raise ValueError("outputs must be sorted by agent_id")
    queries = []
    keys = []
    for output in outputs:
        try:
            queries.append(embedder.embed(output.query_descriptor.text))
            keys.append(embedder.embed(output.key_descriptor.text))
        except Exception as exc:  # remote errors surface after retry exhaustion
            raise EmbedderFailure(output.author_id, exc) from exc
    return tuple(queries), tuple(keys)


def relevance_matrix(
    queries: Sequence[EmbeddingVector], keys: Sequence[EmbeddingVector]
) -> RelevanceMatrix:
    """Score every consumer query against every provider key.

    The diagonal is computed like any other entry; self-loop removal is the
    topology builder's job, not scoring's.
    """
    if len(queries) != len(keys):
        raise DimensionMismatch("query and key row counts differ")
    scores = tuple(
        tuple(cosine_similarity(query, key) for key in keys) for query in queries
    )
    return RelevanceMatrix(scores=scores)
