"""Text embeddings behind a small provider interface, plus cosine similarity."""

from __future__ import annotations

import hashlib
import os
import threading
import time
from typing import Protocol

import httpx
import numpy as np

from .errors import ConfigurationError, ProviderError

DEFAULT_DIMENSION = 64


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def _check_text(text: str) -> None:
    if not isinstance(text, str) or not text.strip():
        raise ValueError("cannot embed empty text")


def _freeze(vec: np.ndarray, dimension: int | None) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if dimension is not None and vec.shape[0] != dimension:
        raise ProviderError(f"embedding has dimension {vec.shape[0]}, expected {dimension}")
    if not np.all(np.isfinite(vec)):
        raise ProviderError("embedding contains non-finite entries")
    vec.setflags(write=False)
    return vec


class HashEmbedder:
    """Offline, deterministic embedder.

    The text is hashed together with ``seed`` into a 64-bit integer that seeds
    a normal generator; the ``dimension`` draws are normalised to unit length.
    Similar texts are *not* close; this exists so everything runs offline.
    """

    def __init__(self, seed: int = 0, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.seed = int(seed)
        self.dimension = int(dimension)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _hash(self, text: str) -> int:
        key = self.seed.to_bytes(8, "little", signed=True)
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key).digest()
        return int.from_bytes(digest, "little")

    def embed(self, text: str) -> np.ndarray:
        _check_text(text)
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        draws = np.random.default_rng(self._hash(text)).standard_normal(self.dimension)
        vec = _freeze(draws / np.linalg.norm(draws), self.dimension)
        with self._lock:
            self._cache[text] = vec
        return vec


class RemoteEmbedder:
    """Client for an HTTP JSON embedding endpoint.

    Request body ``{"model": ..., "input": [text]}``; the vector is read from
    ``data[0].embedding`` and returned unmodified.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key_env: str = "OPENAI_API_KEY",
        dimension: int | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.retries = max(1, retries)
        self.backoff = backoff
        self.api_key = os.environ.get(api_key_env)
        if not self.api_key:
            raise ConfigurationError(f"environment variable {api_key_env} is not set")
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, text: str) -> np.ndarray:
        _check_text(text)
        payload = {"model": self.model, "input": [text]}
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last: ProviderError | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last = ProviderError(f"embedding request failed: {exc}")
                continue
            if resp.status_code // 100 != 2:
                last = ProviderError(
                    f"embedding endpoint returned HTTP {resp.status_code}",
                    status=resp.status_code,
                    body=resp.text,
                )
                continue
            try:
                vec = resp.json()["data"][0]["embedding"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed embedding response: {exc}", body=resp.text) from exc
            out = _freeze(vec, self.dimension)
            if self.dimension is None:
                self.dimension = out.shape[0]
            return out
        assert last is not None
        raise last


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))
