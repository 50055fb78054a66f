"""Embedding provider client and vector arithmetic.

Provider wire contract (OpenAI-compatible)::

    POST {endpoint_url}  {"model": str, "input": [str, ...]}
    ->   {"data": [{"index": int, "embedding": [float, ...]}, ...]}
"""

from __future__ import annotations

import hashlib
import logging
import math
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np

from ._client import CacheMissError, DiskCache, ProviderError, RateLimiter, auth_headers, content_key, post_json
from .normalize import tokenize

log = logging.getLogger(__name__)


class EmbeddingVector:
    """A finite, non-empty 1-D vector. Immutable."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingVector is immutable")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"EmbeddingVector(dim={self.dim})"


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    va = a.values if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    cos = float(np.dot(va, vb)) / (na * nb)
    return max(-1.0, min(1.0, cos))


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    endpoint_url: str
    model_id: str
    batch_size: int = 32
    timeout: float = 30.0
    cache_path: str | None = None
    max_retries: int = 2
    max_in_flight: int = 4
    requests_per_second: float | None = None
    api_key_env: str = "EMBEDDING_API_KEY"
    offline: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ValueError("max_retries must be >= 0 and max_in_flight >= 1")


class EmbeddingClient:
    """Batched, cached, concurrency-limited client for an embedding provider."""

    def __init__(self, cfg: EmbeddingProviderConfig, cache: DiskCache | None = None,
                 http: httpx.Client | None = None):
        self.cfg = cfg
        self.cache = cache if cache is not None else DiskCache(cfg.cache_path)
        self._http = http or httpx.Client()
        self._in_flight = threading.Semaphore(cfg.max_in_flight)
        self._limiter = RateLimiter(cfg.requests_per_second)
        self._count_lock = threading.Lock()
        self.requests = 0

    def _key(self, text: str) -> str:
        return content_key("embedding", self.cfg.model_id, text)

    def _request(self, batch: list[str]) -> list[list[float]]:
        with self._count_lock:
            self.requests += 1
        body = post_json(
            self._http, self.cfg.endpoint_url, {"model": self.cfg.model_id, "input": batch},
            headers=auth_headers(self.cfg.api_key_env), timeout=self.cfg.timeout,
            max_retries=self.cfg.max_retries, in_flight=self._in_flight, limiter=self._limiter,
        )
        try:
            data = body["data"]
            items = sorted(data, key=lambda d: d["index"])
            indices = [d["index"] for d in items]
            vectors = [d["embedding"] for d in items]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc!r}") from exc
        if len(vectors) != len(batch):
            raise ProviderError(f"provider returned {len(vectors)} vectors for {len(batch)} texts")
        if indices != list(range(len(batch))):
            raise ProviderError(f"provider returned indices {indices}, expected 0..{len(batch) - 1}")
        return vectors

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """One vector per text, in input order, each cached by (model, exact text)."""
        texts = list(texts)
        if not texts:
            raise ValueError("embed called with no texts")
        for t in texts:
            if not isinstance(t, str) or not t.strip():
                raise ValueError("empty text for embedding")

        missing = list(dict.fromkeys(t for t in texts if self._key(t) not in self.cache))
        if missing and self.cfg.offline:
            raise CacheMissError("embedding", [f"{self._key(t)[:16]}:{t[:40]!r}" for t in missing])

        if missing:
            bs = self.cfg.batch_size
            batches = [missing[i:i + bs] for i in range(0, len(missing), bs)]
            with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
                results = list(pool.map(self._request, batches))
            fresh = [v for vecs in results for v in vecs]
            dims = {len(v) for v in fresh}
            if len(dims) > 1:
                raise ProviderError(f"dimension mismatch across batch: {sorted(dims)}")
            for text, vec in zip(missing, fresh):
                EmbeddingVector(vec)  # reject non-finite before caching
                self.cache.set(self._key(text), [float(x) for x in vec])

        out = [EmbeddingVector(self.cache.get(self._key(t))) for t in texts]
        dims = {v.dim for v in out}
        if len(dims) > 1:
            raise ProviderError(f"dimension mismatch between cached and fresh vectors: {sorted(dims)}")
        return out

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def embed_batch(texts: Sequence[str], cfg: EmbeddingProviderConfig) -> list[EmbeddingVector]:
    """One-shot convenience wrapper around :class:`EmbeddingClient`."""
    with EmbeddingClient(cfg) as client:
        return client.embed(texts)


def hashing_embedding(text: str, dim: int = 256) -> list[float]:
    """Deterministic signed feature-hashing bag-of-words vector.

    Used by the offline mock provider; cosine between two texts then tracks
    their token overlap. Texts with no tokens map to a fixed unit vector.
    """
    vec = [0.0] * dim
    for tok in tokenize(text.lower()):
        h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "little") % dim
        sign = 1.0 if h[4] & 1 else -1.0
        vec[idx] += sign
    norm = math.sqrt(sum(x * x for x in vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return [x / norm for x in vec]
