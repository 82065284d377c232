"""Text embeddings for the similarity channels.

The built-in provider is a hashed bag of words: lowercase the text, split on
runs of non-alphanumeric characters, hash every token into one of ``d``
buckets with seeded 64-bit FNV-1a, count, and L2-normalize. Outputs are
pinned by golden-vector tests; changing the hash or the seed is a breaking
change.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, EmbeddingProviderError

DEFAULT_DIMENSION = 256
HASH_SEED = 0x5452414345520001

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs. Shared by the embedding and the lexical channel."""
    return _TOKEN_RE.findall(text.lower())


def fnv1a_64(data: bytes, seed: int = HASH_SEED) -> int:
    """64-bit FNV-1a with the offset basis xor-ed by ``seed``."""
    h = (_FNV_OFFSET ^ seed) & _MASK64
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=65536)
def _bucket(token: str, dimension: int) -> int:
    return fnv1a_64(token.encode("utf-8")) % dimension


def hashed_bow(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    vec = np.zeros(dimension, dtype=np.float64)
    for tok in tokenize(text):
        vec[_bucket(tok, dimension)] += 1.0
    norm = math.sqrt(float(vec @ vec))
    if norm > 0.0:
        vec /= norm
    return vec


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine of the angle between ``u`` and ``v``; exactly 0 when either is the zero vector."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(u @ v) / (nu * nv)
    return min(1.0, max(-1.0, c))


def semantic_distance(u: Sequence[float], v: Sequence[float]) -> float:
    return 1.0 - cosine_similarity(u, v)


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    kind: str = "builtin_hashed_bow"
    dimension: int = DEFAULT_DIMENSION
    endpoint: str | None = None
    cache_capacity: int = 4096
    timeout: float = 10.0
    retries: int = 2
    fallback_to_builtin: bool = False

    def __post_init__(self):
        if self.kind not in ("builtin_hashed_bow", "external_http"):
            raise ConfigError(f"unknown embedding provider kind {self.kind!r}")
        if self.dimension < 8:
            raise ConfigError("embedding dimension must be >= 8")
        if self.cache_capacity < 0:
            raise ConfigError("cache_capacity must be >= 0")
        if self.kind == "external_http" and not (self.endpoint or os.environ.get("TRACER_EMBED_URL")):
            raise ConfigError("external_http provider needs an endpoint")


class HashedBowEmbedder:
    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 8:
            raise ConfigError("embedding dimension must be >= 8")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        return hashed_bow(text, self.dimension)


class HttpEmbedder:
    """Client for a service that answers ``POST {"texts": [...]}`` with ``{"vectors": [[...], ...]}``."""

    def __init__(self, endpoint: str, dimension: int, timeout: float = 10.0, retries: int = 2):
        self.endpoint = endpoint
        self.dimension = dimension
        self.timeout = timeout
        self.retries = retries

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": list(texts)}).encode("utf-8")
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.endpoint, data=body, method="POST",
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(0.05 * (attempt + 1))
        else:
            raise EmbeddingProviderError(f"embedding endpoint {self.endpoint} unreachable: {last_exc}")

        vectors = payload.get("vectors") if isinstance(payload, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbeddingProviderError("embedding response must carry one vector per text")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise EmbeddingProviderError(
                    f"embedding response has dimension {arr.shape}, expected {self.dimension}")
            if not np.all(np.isfinite(arr)):
                raise EmbeddingProviderError("embedding response has non-finite entries")
            out.append(arr)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


class FallbackEmbedder:
    def __init__(self, primary: Embedder, fallback: Embedder):
        if primary.dimension != fallback.dimension:
            raise ConfigError("fallback provider must share the primary's dimension")
        self.primary = primary
        self.fallback = fallback
        self.dimension = primary.dimension

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.primary.embed(text)
        except EmbeddingProviderError:
            return self.fallback.embed(text)


class CachedEmbedder:
    """Bounded cache keyed on the exact text bytes, evicting oldest inserts first.

    Reads are lock-free; inserts and evictions are serialized by a lock.
    """

    def __init__(self, inner: Embedder, capacity: int = 4096):
        self.inner = inner
        self.dimension = inner.dimension
        self.capacity = capacity
        self._store: OrderedDict[str, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def embed(self, text: str) -> np.ndarray:
        if self.capacity == 0:
            return self.inner.embed(text)
        vec = self._store.get(text)
        if vec is not None:
            self.hits += 1
            return vec
        self.misses += 1
        vec = self.inner.embed(text)
        vec.setflags(write=False)
        with self._lock:
            self._store[text] = vec
            while len(self._store) > self.capacity:
                self._store.popitem(last=False)
        return vec


def build_embedder(cfg: EmbeddingProviderConfig | None = None) -> Embedder:
    cfg = cfg or EmbeddingProviderConfig()
    if cfg.kind == "builtin_hashed_bow":
        base: Embedder = HashedBowEmbedder(cfg.dimension)
    else:
        endpoint = os.environ.get("TRACER_EMBED_URL") or cfg.endpoint
        base = HttpEmbedder(endpoint, cfg.dimension, cfg.timeout, cfg.retries)
        if cfg.fallback_to_builtin:
            base = FallbackEmbedder(base, HashedBowEmbedder(cfg.dimension))
    return CachedEmbedder(base, cfg.cache_capacity) if cfg.cache_capacity > 0 else base


def default_embedder() -> Embedder:
    return build_embedder(EmbeddingProviderConfig())
