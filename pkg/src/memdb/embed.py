"""Pluggable text embedders.

The engine never downloads a model: anything with a name, a dimension,
and a deterministic embed(text) -> unit vector works. The built-in
HashEmbedder scatters salted token hashes into buckets, which gives
stable, reproducible vectors that still cluster repeated tokens, so
end-to-end tests can assert exact results.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np

from memdb.vectors import normalize

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

_SLOTS_PER_TOKEN = 4


class Embedder(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic bag-of-tokens embedding, unit-normalized."""

    def __init__(self, dimension: int = 768, name: str = "det-hash", seed: str = "memdb"):
        self.dimension = int(dimension)
        self.name = name
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        acc = np.zeros(self.dimension, dtype=np.float64)
        tokens = _TOKEN_RE.findall(text.lower()) or [""]
        for token in tokens:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            for slot in range(_SLOTS_PER_TOKEN):
                chunk = digest[slot * 8 : slot * 8 + 8]
                bucket = int.from_bytes(chunk[:4], "little") % self.dimension
                sign = 1.0 if chunk[4] & 1 else -1.0
                magnitude = 1.0 + chunk[5] / 255.0
                acc[bucket] += sign * magnitude
        if not acc.any():  # pathological full cancellation
            acc[0] = 1.0
        return normalize(acc)


_BUILTIN = {"det-hash": HashEmbedder}


def make_embedder(name: str, dimension: int) -> Embedder:
    try:
        cls = _BUILTIN[name]
    except KeyError:
        from memdb.errors import EmbedderMissing

        raise EmbedderMissing(f"unknown embedder {name!r}") from None
    return cls(dimension=dimension, name=name)
