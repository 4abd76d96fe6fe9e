"""Embedding providers: a seeded hash mock and an HTTP+JSON adapter.

Every provider returns unit-norm row vectors of a fixed dimension.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from ._http import TransportFailure, auth_headers, post_json
from .core import ExpMemError, normalize


class EmbeddingError(ExpMemError):
    pass


@runtime_checkable
class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dimension) with unit-norm rows."""
        ...


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise EmbeddingError("provider returned a zero vector")
    return vectors / norms


class MockEmbeddingProvider:
    """Deterministic stand-in: normalized text -> seeded Gaussian vector -> unit norm.

    Identical text (after label normalization) always maps to the identical
    vector; distinct texts map to effectively independent random directions.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension < 2:
            raise ValueError("mock embedding dimension must be at least 2")
        self.dimension = dimension
        self.seed = seed

    def _vector(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}\x00{normalize(text)}".encode("utf-8"), digest_size=16).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        v = rng.standard_normal(self.dimension)
        return v / np.linalg.norm(v)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self._vector(t) for t in texts])


def mock_embedding_provider(dimension: int, seed: int) -> MockEmbeddingProvider:
    return MockEmbeddingProvider(dimension=dimension, seed=seed)


class HttpEmbeddingProvider:
    """Remote encoder: POST ``{"texts": [...]}`` -> ``{"vectors": [[...], ...]}``."""

    def __init__(
        self,
        url: str,
        dimension: int,
        *,
        token: str | None = None,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.dimension = dimension
        self.retries = retries
        self.backoff = backoff
        self._headers = auth_headers(token)
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        try:
            body = post_json(
                self._client, self.url, {"texts": list(texts)},
                headers=self._headers, attempts=self.retries, backoff=self.backoff,
            )
        except TransportFailure as exc:
            raise EmbeddingError(str(exc)) from exc
        vectors = body.get("vectors") if isinstance(body, dict) else None
        try:
            array = np.asarray(vectors, dtype=float)
        except (TypeError, ValueError) as exc:
            raise EmbeddingError("response 'vectors' is not a numeric matrix") from exc
        if array.shape != (len(texts), self.dimension):
            raise EmbeddingError(
                f"expected {len(texts)}x{self.dimension} vectors, got shape {array.shape}"
            )
        return _unit_rows(array)

    def close(self) -> None:
        self._client.close()


class MemoEmbedder:
    """Per-run in-memory cache in front of another provider."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.dimension = inner.dimension
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            fresh = self.inner.embed(missing)
            with self._lock:
                for text, vec in zip(missing, fresh):
                    self._cache[text] = vec
        if not texts:
            return np.zeros((0, self.dimension))
        with self._lock:
            return np.vstack([self._cache[t] for t in texts])
