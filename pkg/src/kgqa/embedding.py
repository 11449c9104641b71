"""Text embedding providers, similarity, and batch caching.

The reference embedder is a hashed bag-of-words model: tokens are FNV-1a
64-bit hashed into a fixed number of count slots and the vector is
L2-normalized. It is deterministic across runs and platforms (pure integer
hashing, fixed fold order), which makes it suitable as an offline stand-in
for a sentence-encoder service in tests and fixtures. All entries are
non-negative, so pairwise similarities of non-empty texts land in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

DEFAULT_DIMENSION = 256

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class EmbeddingError(RuntimeError):
    """Embedding lookup failed (bad response or exhausted retries)."""


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs (underscore counts as a separator)."""
    return _TOKEN_RE.findall(text.lower())


def embed_reference(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Hashed bag-of-words embedding; the empty token list maps to the zero vector."""
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokenize(text):
        vec[fnv1a_64(token.encode("utf-8")) % dimension] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product; cosine for unit vectors. Raises on dimension mismatch."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class ReferenceEmbedder:
    """Deterministic offline embedder; see module docstring."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.provider_id = f"reference-fnv1a-{dimension}"

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [embed_reference(t, self.dimension) for t in texts]


class RemoteEmbedder:
    """HTTP embedding service speaking {"input": [...], "model": ...} -> {"data": [{"embedding": [...]}]}.

    Vectors are L2-normalized on receipt so downstream dot products stay
    comparable with the reference embedder.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        api_key_env: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        session=None,
        sleep=time.sleep,
    ):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self.provider_id = f"remote-{model}-{dimension}"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            import os

            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        payload = {"input": list(texts), "model": self.model}
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._session.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise EmbeddingError(f"HTTP {resp.status_code} from {self.endpoint}")
                resp.raise_for_status()
                data = resp.json()["data"]
                break
            except Exception as exc:
                last_error = exc
                if attempt == self.max_attempts:
                    raise EmbeddingError(f"embedding request failed after {attempt} attempts: {exc}") from exc
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
        if len(data) != len(texts):
            raise EmbeddingError(f"expected {len(texts)} embeddings, got {len(data)}")
        out = []
        for item in data:
            vec = np.asarray(item["embedding"], dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise EmbeddingError(f"embedding has dimension {vec.shape}, expected {self.dimension}")
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec = vec / norm
            out.append(vec)
        return out


class EmbeddingCache:
    """Thread-safe (provider-id, text) -> vector cache with JSON persistence.

    Entries are keyed by (provider-id, SHA-256 of text) so the persisted form
    round-trips exactly and arbitrary content is safe to store.
    """

    def __init__(self):
        self._data: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    @staticmethod
    def text_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, provider_id: str, text: str) -> np.ndarray | None:
        with self._lock:
            return self._data.get((provider_id, self.text_key(text)))

    def put(self, provider_id: str, text: str, vector: np.ndarray) -> None:
        with self._lock:
            self._data[(provider_id, self.text_key(text))] = vector

    def save(self, path: str | Path) -> None:
        providers: dict[str, dict[str, list[float]]] = {}
        with self._lock:
            for (pid, key), vec in self._data.items():
                providers.setdefault(pid, {})[key] = [float(x) for x in vec]
        payload = {pid: dict(sorted(entries.items())) for pid, entries in sorted(providers.items())}
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def load(self, path: str | Path) -> int:
        """Merge persisted vectors into this cache; returns the number of entries loaded."""
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        count = 0
        with self._lock:
            for pid, entries in payload.items():
                for key, vec in entries.items():
                    self._data[(pid, key)] = np.asarray(vec, dtype=np.float64)
                    count += 1
        return count


def embed_batch(
    texts: Sequence[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[np.ndarray]:
    """Embed texts preserving order; each distinct text is computed at most once.

    With a cache, previously seen (provider, text) pairs are never recomputed;
    without one, deduplication still applies within the call.
    """
    if not texts:
        return []
    local: dict[str, np.ndarray] = {}
    missing: list[str] = []
    seen: set[str] = set()
    for text in texts:
        if text in seen:
            continue
        seen.add(text)
        cached = cache.get(provider.provider_id, text) if cache is not None else None
        if cached is not None:
            local[text] = cached
        else:
            missing.append(text)
    if missing:
        vectors = provider.embed_many(missing)
        if len(vectors) != len(missing):
            raise EmbeddingError(f"provider returned {len(vectors)} vectors for {len(missing)} texts")
        for text, vec in zip(missing, vectors):
            vec = np.asarray(vec, dtype=np.float64)
            local[text] = vec
            if cache is not None:
                cache.put(provider.provider_id, text, vec)
    return [local[text] for text in texts]


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    """Configuration for constructing an embedding provider."""

    kind: str = "reference"
    dimension: int = DEFAULT_DIMENSION
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None

    def __post_init__(self) -> None:
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")


def build_embedder(spec: EmbeddingProviderSpec) -> EmbeddingProvider:
    if spec.kind == "reference":
        return ReferenceEmbedder(spec.dimension)
    if spec.kind == "remote":
        if not spec.endpoint or not spec.model:
            raise ValueError("remote embedder needs endpoint and model")
        return RemoteEmbedder(spec.endpoint, spec.model, spec.dimension, api_key_env=spec.api_key_env)
    raise ValueError(f"unknown embedder kind: {spec.kind}")
