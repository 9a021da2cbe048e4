"""Embedding provider interface and the deterministic test embedder."""
from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from .textnorm import light_stem, tokenize


class EmbeddingProviderFailure(RuntimeError):
    """The embedding backend failed; retryable."""


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


# function words carry no retrieval signal and drown it at 64 dimensions
_EMBED_STOPWORDS = frozenset(
    """a an the is are am was were be been being and or but if then than of to
    in on at by for with from as into onto about this that these those there
    here it its he she they them his her their you your i my me we our us do
    does did done can could will would shall should may might must not no yes
    what when where which who whom why how any some all one two""".split()
)


class HashedBagOfWordsEmbedder:
    """Deterministic embedding: hashed bag-of-words, term-frequency weighted.

    Content tokens (a small function-word list is dropped, inflections are
    stem-folded) are hashed (sha1, stable across processes) into one of
    `dimension` buckets; the vector of term frequencies is L2-normalized,
    so identical texts embed to identical unit vectors and cosine
    similarity of a text with itself is exactly 1.0. Order-insensitive by
    construction.
    """

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            if token in _EMBED_STOPWORDS:
                continue
            stem = light_stem(token)
            digest = hashlib.sha1(stem.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            vec[bucket] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def make_embedding_provider(name: str, options: dict | None = None) -> EmbeddingProvider:
    options = options or {}
    if name == "hashed-bow":
        return HashedBagOfWordsEmbedder(dimension=int(options.get("dimension", 64)))
    raise ValueError(f"unknown embedding provider: {name}")
