"""Similarity search over embedding views.

Vectors are stored unit-normalized in float32; similarity is the inner
product (equal to cosine for unit inputs), scored in float64. All
rankings share one tie rule: descending similarity, then ascending
timestamp, which makes output canonical under any insertion order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from memdb import _kernels
from memdb.errors import (
    ChecksumFailure,
    DimensionMismatch,
    InvalidK,
    Untrained,
    ZeroPrefix,
    ZeroVector,
)

_SCORE_CHUNK = 8192  # rows per float64 upcast, bounds temporary memory


def normalize(vec) -> np.ndarray:
    """Scale to unit L2 norm (float32). Raises ZeroVector on zero input."""
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise ZeroVector("expected a one-dimensional vector")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroVector("cannot normalize a zero or non-finite vector")
    return (arr / norm).astype(np.float32)


def similarity(u, v) -> float:
    """Inner product of two unit vectors: cosine similarity, in [-1, 1]."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector dims differ: {u.shape} vs {v.shape}")
    return float(np.dot(u.astype(np.float64, copy=False), v.astype(np.float64, copy=False)))


def matryoshka_truncate(v_high, d_low: int) -> np.ndarray:
    """First d_low components, re-normalized to unit length."""
    arr = np.asarray(v_high)
    if not (1 <= d_low <= arr.shape[0]):
        raise DimensionMismatch(
            f"truncation dim {d_low} outside [1, {arr.shape[0]}]"
        )
    prefix = arr[:d_low].astype(np.float64)
    norm = float(np.linalg.norm(prefix))
    if norm < 1e-12:
        raise ZeroPrefix(f"first {d_low} components are all zero")
    return (prefix / norm).astype(np.float32)


def _scores_f64(matrix: np.ndarray, q: np.ndarray) -> np.ndarray:
    """matrix @ q with float64 accumulation, chunked to bound temporaries."""
    n = matrix.shape[0]
    q64 = q.astype(np.float64, copy=False)
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _SCORE_CHUNK):
        hi = min(lo + _SCORE_CHUNK, n)
        out[lo:hi] = matrix[lo:hi].astype(np.float64) @ q64
    return out


class VectorView:
    """One named view: a growable float32 matrix keyed by timestamp."""

    def __init__(self, name: str, dimension: int):
        self.name = name
        self.dimension = int(dimension)
        self._matrix = np.empty((16, dimension), dtype=np.float32)
        self._ts = np.empty(16, dtype=np.int64)
        self._pos: dict[int, int] = {}
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def __contains__(self, ts: int) -> bool:
        return ts in self._pos

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix[: self._n]

    @property
    def timestamps(self) -> np.ndarray:
        return self._ts[: self._n]

    def get(self, ts: int) -> Optional[np.ndarray]:
        i = self._pos.get(ts)
        return None if i is None else self._matrix[i]

    def add(self, ts: int, vec: np.ndarray) -> None:
        if vec.shape[0] != self.dimension:
            raise DimensionMismatch(
                f"view {self.name!r}: got dim {vec.shape[0]}, expected {self.dimension}"
            )
        i = self._pos.get(ts)
        if i is not None:  # replacement (renormalize / regenerated view)
            self._matrix[i] = vec
            return
        if self._n == self._matrix.shape[0]:
            grown = np.empty((self._n * 2, self.dimension), dtype=np.float32)
            grown[: self._n] = self._matrix[: self._n]
            self._matrix = grown
            ts_grown = np.empty(self._n * 2, dtype=np.int64)
            ts_grown[: self._n] = self._ts[: self._n]
            self._ts = ts_grown
        self._matrix[self._n] = vec
        self._ts[self._n] = ts
        self._pos[ts] = self._n
        self._n += 1


def _check_query(view: VectorView, q: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float32)
    if q.shape != (view.dimension,):
        raise DimensionMismatch(
            f"query dim {q.shape} does not match view dim {view.dimension}"
        )
    return q


def _ranked(scores: np.ndarray, ts: np.ndarray, k: int) -> list[tuple[int, float]]:
    idx = _kernels.topk(np.ascontiguousarray(scores), np.ascontiguousarray(ts), k)
    return [(int(ts[i]), float(scores[i])) for i in idx]


def knn_flat(
    view: VectorView,
    q,
    k: int,
    candidates: Optional[Iterable[int]] = None,
) -> list[tuple[int, float]]:
    """Exact k-nearest by inner product, optionally within a candidate set.

    This is the oracle the approximate paths are measured against.
    """
    q = _check_query(view, q, k)
    if candidates is None:
        if len(view) == 0:
            return []
        return _ranked(_scores_f64(view.matrix, q), view.timestamps, k)
    rows = [view._pos[t] for t in candidates if t in view._pos]
    if not rows:
        return []
    rows_arr = np.asarray(rows, dtype=np.int64)
    sub = view.matrix[rows_arr]
    return _ranked(_scores_f64(sub, q), view.timestamps[rows_arr], k)


# ── IVF (inverted file) index ───────────────────────────────────────────

KMEANS_ITERS = 20
N_LISTS_MIN = 16
N_LISTS_MAX = 4096


def default_n_lists(n: int) -> int:
    return int(min(max(np.ceil(np.sqrt(n)), N_LISTS_MIN), N_LISTS_MAX, max(n, 1)))


@dataclass
class IvfIndex:
    """Clustered postings over one view: probe the nearest lists only."""

    view_name: str
    n_lists: int = 0
    centroids: np.ndarray = field(default_factory=lambda: np.empty((0, 0), np.float32))
    postings: list[list[int]] = field(default_factory=list)
    trained_on: int = 0

    @property
    def trained(self) -> bool:
        return self.n_lists > 0

    def train(self, view: VectorView, n_lists: Optional[int] = None, seed: int = 0) -> None:
        """Spherical k-means (k-means++ init, fixed iterations) + assignment."""
        n = len(view)
        if n == 0:
            raise Untrained("cannot train on an empty view")
        k = n_lists if n_lists is not None else default_n_lists(n)
        k = min(k, n)
        data = view.matrix.astype(np.float64)
        rng = np.random.default_rng(seed)
        centroids = _kmeans_pp_init(data, k, rng)
        assign = np.zeros(n, dtype=np.int64)
        for _ in range(KMEANS_ITERS):
            assign = np.argmax(data @ centroids.T, axis=1)
            for j in range(k):
                members = data[assign == j]
                if len(members) == 0:
                    # reseed dead list to the point farthest from its centroid
                    farthest = int(np.argmin(np.max(data @ centroids.T, axis=1)))
                    centroids[j] = data[farthest]
                else:
                    centroids[j] = members.sum(axis=0)
                norm = np.linalg.norm(centroids[j])
                if norm > 0:
                    centroids[j] /= norm
        assign = np.argmax(data @ centroids.T, axis=1)
        self.n_lists = k
        self.centroids = centroids.astype(np.float32)
        ts = view.timestamps
        self.postings = [sorted(int(t) for t in ts[assign == j]) for j in range(k)]
        self.trained_on = n

    def add(self, ts: int, vec: np.ndarray) -> None:
        if not self.trained:
            raise Untrained("train the index before adding entries")
        sims = self.centroids.astype(np.float64) @ vec.astype(np.float64)
        self.postings[int(np.argmax(sims))].append(int(ts))


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    chosen = [int(rng.integers(n))]
    # squared chordal distance on the sphere: 2 - 2*cos
    d2 = 2.0 - 2.0 * (data @ data[chosen[0]])
    d2 = np.maximum(d2, 0.0)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.maximum(2.0 - 2.0 * (data @ data[idx]), 0.0))
    return data[chosen].copy()


def knn_ivf(
    index: IvfIndex, view: VectorView, q, k: int, n_probe: int
) -> list[tuple[int, float]]:
    """Exact scan over the n_probe posting lists nearest to the query.

    With n_probe == n_lists this reproduces knn_flat element-for-element.
    """
    if not index.trained:
        raise Untrained("index is not trained")
    q = _check_query(view, q, k)
    if not (1 <= n_probe <= index.n_lists):
        raise InvalidK(f"n_probe {n_probe} outside [1, {index.n_lists}]")
    centroid_sims = index.centroids.astype(np.float64) @ q.astype(np.float64)
    lists = _kernels.topk(
        np.ascontiguousarray(centroid_sims),
        np.arange(index.n_lists, dtype=np.int64),
        n_probe,
    )
    candidates: list[int] = []
    for j in lists:
        candidates.extend(index.postings[j])
    return knn_flat(view, q, k, candidates=candidates)


def coarse_then_refine(
    view_low: VectorView,
    view_high: VectorView,
    q_high,
    k: int,
    k_coarse: int,
) -> list[tuple[int, float]]:
    """Two-stage search: filter on the low view, re-rank on the high view."""
    if k > k_coarse:
        raise InvalidK(f"k ({k}) must not exceed k_coarse ({k_coarse})")
    q_high = _check_query(view_high, q_high, k)
    q_low = matryoshka_truncate(q_high, view_low.dimension)
    coarse = knn_flat(view_low, q_low, k_coarse)
    return knn_flat(view_high, q_high, k, candidates=[t for t, _ in coarse])


# ── sidecar persistence (per sealed segment) ────────────────────────────

IVF_MAGIC = b"MEMIVF1\n"


def save_ivf(index: IvfIndex, path) -> None:
    if not index.trained:
        raise Untrained("cannot persist an untrained index")
    dim = index.centroids.shape[1]
    parts = [
        struct.pack("<II", 1, index.n_lists),
        struct.pack("<IQ", dim, index.trained_on),
        np.ascontiguousarray(index.centroids, dtype="<f4").tobytes(),
    ]
    name = index.view_name.encode("utf-8")
    parts.insert(0, struct.pack("<H", len(name)) + name)
    for posting in index.postings:
        parts.append(struct.pack("<I", len(posting)))
        parts.append(np.asarray(posting, dtype="<u8").tobytes())
    body = b"".join(parts)
    blob = IVF_MAGIC + body + struct.pack("<I", _kernels.crc32c(body))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_ivf(path) -> IvfIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != IVF_MAGIC or len(blob) < 12:
        raise ChecksumFailure(f"not an IVF sidecar: {path}")
    body, (crc,) = blob[8:-4], struct.unpack("<I", blob[-4:])
    if _kernels.crc32c(body) != crc:
        raise ChecksumFailure(f"IVF sidecar checksum mismatch: {path}")
    pos = 0
    (name_len,) = struct.unpack_from("<H", body, pos)
    pos += 2
    view_name = body[pos : pos + name_len].decode("utf-8")
    pos += name_len
    version, n_lists = struct.unpack_from("<II", body, pos)
    pos += 8
    dim, trained_on = struct.unpack_from("<IQ", body, pos)
    pos += 12
    centroids = np.frombuffer(body, dtype="<f4", count=n_lists * dim, offset=pos)
    centroids = centroids.reshape(n_lists, dim).astype(np.float32, copy=True)
    pos += 4 * n_lists * dim
    postings = []
    for _ in range(n_lists):
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        ids = np.frombuffer(body, dtype="<u8", count=count, offset=pos)
        pos += 8 * count
        postings.append([int(t) for t in ids])
    return IvfIndex(view_name, n_lists, centroids, postings, trained_on)
