"""HTTP boundary: chat completions and embeddings against OpenAI-style APIs.

Retries cover only the transient class (timeouts, connection drops, 429,
5xx) with exponential backoff; auth and other 4xx failures surface
immediately. Every attempt is counted, and when a provider omits usage the
tokens are estimated from character counts and flagged as such so the
accounting stays total.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass

import httpx

from dytopo.errors import (
    AuthFailure,
    DimensionInconsistent,
    MalformedProviderResponse,
    RequestRejected,
    TransientExhausted,
)
from dytopo.model import EmbeddingVector

API_KEY_ENV_VAR = "DYTOPO_API_KEY"
_RETRYABLE_STATUS = {429}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str | None = None  # falls back to the environment variable
    request_timeout: float = 60.0
    max_retries: int = 3
    retry_backoff_ms: int = 250

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")

    def resolve_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV_VAR)


@dataclass(frozen=True)
class UsageDelta:
    """Cost of one logical call (possibly several HTTP attempts)."""

    prompt_tokens: int
    completion_tokens: int
    request_count: int
    wall_time_ms: int
    estimated: bool = False


@dataclass
class UsageCounters:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    request_count: int = 0
    wall_time_ms: int = 0
    estimated: bool = False

    def add(self, delta: UsageDelta):
        self.prompt_tokens += delta.prompt_tokens
        self.completion_tokens += delta.completion_tokens
        self.request_count += delta.request_count
        self.wall_time_ms += delta.wall_time_ms
        self.estimated = self.estimated or delta.estimated

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "request_count": self.request_count,
            "wall_time_ms": self.wall_time_ms,
            "estimated": self.estimated,
        }


class UsageLedger:
    """Thread-safe per-agent cost accounting; totals are derived, so the
    sum-of-parts invariant holds by construction."""

    def __init__(self):
        self._lock = threading.Lock()
        self._per_label: dict[str, UsageCounters] = {}

    def record(self, label: str, delta: UsageDelta):
        with self._lock:
            self._per_label.setdefault(label, UsageCounters()).add(delta)

    def total(self) -> UsageCounters:
        with self._lock:
            total = UsageCounters()
            for counters in self._per_label.values():
                total.add(
                    UsageDelta(
                        prompt_tokens=counters.prompt_tokens,
                        completion_tokens=counters.completion_tokens,
                        request_count=counters.request_count,
                        wall_time_ms=counters.wall_time_ms,
                        estimated=counters.estimated,
                    )
                )
            return total

    def snapshot(self) -> dict:
        with self._lock:
            per_agent = {label: c.to_dict() for label, c in sorted(self._per_label.items())}
        return {"per_agent": per_agent, "total": self.total().to_dict()}


def _estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


class ChatClient:
    """Shared, thread-safe client with a configurable concurrency cap.

    A custom ``httpx`` transport can be injected for tests; the retry and
    accounting behavior is identical either way.
    """

    def __init__(self, transport: httpx.BaseTransport | None = None, max_concurrency: int = 4):
        self._client = httpx.Client(transport=transport)
        self._gate = threading.BoundedSemaphore(max_concurrency)

    def close(self):
        self._client.close()

    def _post_with_retries(
        self, endpoint: EndpointConfig, path: str, payload: dict
    ) -> tuple[dict, int]:
        headers = {}
        key = endpoint.resolve_api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = endpoint.base_url.rstrip("/") + path
        attempts = 0
        last_error: Exception | None = None
        while attempts <= endpoint.max_retries:
            if attempts:
                time.sleep(endpoint.retry_backoff_ms * (2 ** (attempts - 1)) / 1000.0)
            attempts += 1
            try:
                with self._gate:
                    response = self._client.post(
                        url, json=payload, headers=headers, timeout=endpoint.request_timeout
                    )
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(f"{response.status_code} from {url}")
            if 400 <= response.status_code < 500 and response.status_code not in _RETRYABLE_STATUS:
                raise RequestRejected(f"{response.status_code} from {url}")
            if response.status_code >= 400:
                last_error = httpx.HTTPStatusError(
                    f"{response.status_code}", request=response.request, response=response
                )
                continue
            try:
                body = response.json()
            except ValueError as exc:
                raise MalformedProviderResponse(f"non-JSON body from {url}") from exc
            if not isinstance(body, dict):
                raise MalformedProviderResponse(f"non-object body from {url}")
            return body, attempts
        raise TransientExhausted(f"gave up on {url} after {attempts} attempts: {last_error}")

    def chat_complete(
        self,
        endpoint: EndpointConfig,
        system_prompt: str,
        user_content: str,
        *,
        temperature: float = 0.3,
        max_tokens: int = 4000,
        structured_output: bool = True,
    ) -> tuple[str, UsageDelta]:
        payload = {
            "model": endpoint.model_name,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_content},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        if structured_output:
            payload["response_format"] = {"type": "json_object"}
        started = time.monotonic()
        body, attempts = self._post_with_retries(endpoint, "/chat/completions", payload)
        wall_ms = int((time.monotonic() - started) * 1000)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderResponse("response lacks choices[0].message.content") from exc
        if not isinstance(text, str):
            raise MalformedProviderResponse("message content is not a string")
        usage = body.get("usage")
        if isinstance(usage, dict) and "prompt_tokens" in usage and "completion_tokens" in usage:
            delta = UsageDelta(
                prompt_tokens=int(usage["prompt_tokens"]),
                completion_tokens=int(usage["completion_tokens"]),
                request_count=attempts,
                wall_time_ms=wall_ms,
            )
        else:
            delta = UsageDelta(
                prompt_tokens=_estimate_tokens(system_prompt + user_content),
                completion_tokens=_estimate_tokens(text),
                request_count=attempts,
                wall_time_ms=wall_ms,
                estimated=True,
            )
        return text, delta

    def embed_remote(self, endpoint: EndpointConfig, texts: list[str]) -> list[EmbeddingVector]:
        """One batched embeddings call; vectors are re-normalized on receipt
        regardless of what the provider claims, in input order."""
        if not texts:
            raise ValueError("texts must be non-empty")
        payload = {"model": endpoint.model_name, "input": list(texts)}
        body, _ = self._post_with_retries(endpoint, "/embeddings", payload)
        data = body.get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise MalformedProviderResponse("embeddings response size mismatch")
        try:
            rows = sorted(data, key=lambda item: item["index"])
            raw_vectors = [[float(v) for v in item["embedding"]] for item in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProviderResponse("embeddings response malformed") from exc
        dims = {len(vector) for vector in raw_vectors}
        if len(dims) != 1:
            raise DimensionInconsistent(f"vector lengths differ: {sorted(dims)}")
        vectors = []
        for raw in raw_vectors:
            norm = math.sqrt(sum(v * v for v in raw))
            if norm <= 1e-12:
                vectors.append(EmbeddingVector(values=tuple(raw), normalized=False))
            else:
                vectors.append(
                    EmbeddingVector(values=tuple(v / norm for v in raw), normalized=True)
                )
        return vectors


class RemoteEmbedder:
    """Adapter exposing the embeddings endpoint through the Embedder surface."""

    def __init__(self, client: ChatClient, endpoint: EndpointConfig):
        self._client = client
        self._endpoint = endpoint
        self._dim: int | None = None

    def embed(self, text: str) -> EmbeddingVector:
        vector = self._client.embed_remote(self._endpoint, [text])[0]
        if self._dim is None:
            self._dim = vector.dimension
        elif vector.dimension != self._dim:
            raise DimensionInconsistent(
                f"endpoint switched dimension {self._dim} -> {vector.dimension}"
            )
        return vector

    def dimension(self) -> int:
        if self._dim is None:
            self._dim = self.embed("dimension probe").dimension
        return self._dim


class LlmPolicy:
    """Agent policy backed by a chat endpoint; records usage per agent."""

    def __init__(
        self,
        client: ChatClient,
        endpoint: EndpointConfig,
        system_prompt: str,
        *,
        ledger: UsageLedger | None = None,
        usage_label: str = "agent",
        temperature: float = 0.3,
        max_tokens: int = 4000,
        structured_output: bool = True,
    ):
        self._client = client
        self._endpoint = endpoint
        self._system_prompt = system_prompt
        self._ledger = ledger
        self._label = usage_label
        self._temperature = temperature
        self._max_tokens = max_tokens
        self._structured_output = structured_output
        self.invocations = 0

    def step(self, context: str, round_index: int) -> str:
        self.invocations += 1
        text, delta = self._client.chat_complete(
            self._endpoint,
            self._system_prompt,
            context,
            temperature=self._temperature,
            max_tokens=self._max_tokens,
            structured_output=self._structured_output,
        )
        if self._ledger is not None:
            self._ledger.record(self._label, delta)
        return text
