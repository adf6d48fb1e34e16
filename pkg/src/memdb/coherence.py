"""Distance and coherence computations.

Pairwise coherence is e^(−d) for a temporal-semantic distance d, giving a
score in (0, 1] that is 1 exactly when two memories coincide. The default
"practical" distance is the Euclidean norm between the two fused high
views; the "idealized" mode combines weighted temporal and semantic
displacement instead. Windowed local coherence averages the pair scores
over recently created edges and is the engine's drift signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from memdb.errors import DimensionMismatch, InvalidWindow, ValidationError, VertexNotFound
from memdb.graph import displacement as graph_displacement
from memdb.model import MemoryRecord
from memdb.vectors import similarity

FusionFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoherenceConfig:
    """Weights for the idealized metric; mode selects which distance runs."""

    lambda_t: float = 0.0  # per microsecond
    lambda_s: float = 1.0
    mode: str = "practical"  # practical | idealized

    def __post_init__(self):
        if self.mode not in ("practical", "idealized"):
            raise ValidationError(f"unknown coherence mode {self.mode!r}")
        if self.lambda_t < 0 or self.lambda_s < 0:
            raise ValidationError("lambda weights must be non-negative")
        if self.mode == "idealized" and self.lambda_t == 0 and self.lambda_s == 0:
            raise ValidationError("idealized mode needs a nonzero lambda")


@dataclass(frozen=True)
class CoherenceSample:
    """One windowed aggregate; c_local is absent when no edges qualified."""

    window_lo: int
    window_hi: int
    edge_count: int
    c_local: Optional[float]
    computed_at: int


def practical_distance(
    a: MemoryRecord, b: MemoryRecord, fuse: Optional[FusionFn] = None
) -> float:
    """Euclidean distance between the fused high views (identity fusion).

    Computed directly in float64 over the stored float32 vectors; for unit
    vectors this agrees with sqrt(2 - 2*sim) up to float32 storage error.
    """
    va = a.embeddings.high
    vb = b.embeddings.high
    if fuse is not None:
        va, vb = fuse(va), fuse(vb)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"high view dims differ: {va.shape} vs {vb.shape}")
    diff = va.astype(np.float64) - vb.astype(np.float64)
    return float(np.linalg.norm(diff))


def idealized_distance(a: MemoryRecord, b: MemoryRecord, cfg: CoherenceConfig) -> float:
    """sqrt((lambda_t * dt)^2 + (lambda_s * s)^2) with dt in microseconds."""
    dt = b.id_time - a.id_time
    s = 1.0 - similarity(a.embeddings.high, b.embeddings.high)
    return math.hypot(cfg.lambda_t * dt, cfg.lambda_s * s)


def distance(a: MemoryRecord, b: MemoryRecord, cfg: CoherenceConfig) -> float:
    if cfg.mode == "idealized":
        return idealized_distance(a, b, cfg)
    return practical_distance(a, b)


def pair_coherence(
    a: MemoryRecord, b: MemoryRecord, cfg: CoherenceConfig = CoherenceConfig()
) -> float:
    """e^(−d): 1.0 for coincident memories, decaying toward 0."""
    return math.exp(-distance(a, b, cfg))


def local_coherence(ns, window: tuple[int, int], cfg: CoherenceConfig = CoherenceConfig(),
                    computed_at: Optional[int] = None) -> CoherenceSample:
    """Mean pair coherence over edges created inside the window.

    Membership is keyed on edge created_at: edge creation is the recency
    signal. Edges whose endpoints cannot both be resolved are skipped.
    An empty window yields a sample with edge_count 0 and no value.
    """
    t_lo, t_hi = window
    if t_lo > t_hi:
        raise InvalidWindow(f"window lower bound {t_lo} > upper bound {t_hi}")
    total = 0.0
    count = 0
    for edge in ns.edges.all_edges(as_of=None):
        if not (t_lo <= edge.created_at <= t_hi):
            continue
        a = ns.records.get(edge.source)
        b = ns.records.get(edge.destination)
        if a is None or b is None:
            continue
        total += pair_coherence(a, b, cfg)
        count += 1
    return CoherenceSample(
        window_lo=t_lo,
        window_hi=t_hi,
        edge_count=count,
        c_local=(total / count) if count else None,
        computed_at=computed_at if computed_at is not None else t_hi,
    )


def project_local_plane(ns, vertex: int) -> list[tuple[int, int, float]]:
    """(edge_id, Δt, s) for each outgoing edge: the vertex's flow field."""
    if vertex not in ns.records:
        raise VertexNotFound(f"no record at {vertex}")
    out = []
    for edge in ns.edges.edges_out(vertex):
        dt, s = graph_displacement(edge, ns.records.get)
        out.append((edge.edge_id, dt, s))
    return out
