"""Hybrid query pipeline.

Four stages: (1) time-window scan with kind/meta predicates, (2) semantic
ranking of the candidates against the fused query vector, (3) optional
graph expansion from the top-k seeds, admitting edge targets whose pair
coherence with the seed clears a threshold, and (4) combined re-ranking

    S = alpha * sim + beta * exp(-|t_max - t| / rank_tau) + gamma * phi

with ties broken by ascending timestamp. In exact mode every windowed
candidate is scored; coarse mode scores only the low-view-filtered,
high-view-refined pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from memdb import vectors
from memdb.coherence import CoherenceConfig, pair_coherence
from memdb.errors import (
    EmbedderMissing,
    InvalidSpec,
    NoViews,
    NotFound,
    ValidationError,
    ZeroPrefix,
)
from memdb.model import HIGH_VIEW, LOW_VIEW, MemoryRecord, UNIT_NORM_TOL, unit_norm_error

DEFAULT_ALPHA = 0.55
DEFAULT_BETA = 0.35
DEFAULT_GAMMA = 0.10
DEFAULT_K_RRF = 60
PHI_DEGREE_SCALE = 8.0  # log2(1 + out_degree) saturates at 2^8 - 1 neighbors


@dataclass(frozen=True)
class RankingConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    rank_tau: Optional[int] = None  # microseconds; None -> window span / 4
    phi_relation_boost: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValidationError("ranking weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ValidationError("at least one ranking weight must be positive")
        if self.rank_tau is not None and self.rank_tau <= 0:
            raise ValidationError("rank_tau must be positive")


@dataclass(frozen=True)
class Fusion:
    """How per-view similarities combine into the score's sim term."""

    kind: str = "identity"  # identity | weighted | rrf
    weights: Optional[Mapping[str, float]] = None
    k_rrf: int = DEFAULT_K_RRF

    def __post_init__(self):
        if self.kind not in ("identity", "weighted", "rrf"):
            raise ValidationError(f"unknown fusion kind {self.kind!r}")
        if self.kind == "weighted":
            if not self.weights or any(w < 0 for w in self.weights.values()):
                raise ValidationError("weighted fusion needs non-negative view weights")
            if sum(self.weights.values()) <= 0:
                raise ValidationError("weighted fusion needs a positive weight total")
        if self.k_rrf < 1:
            raise ValidationError("k_rrf must be >= 1")


@dataclass(frozen=True)
class Expansion:
    threshold: float
    max_hops: int = 1
    coherence: CoherenceConfig = field(default_factory=CoherenceConfig)

    def __post_init__(self):
        if not (0.0 < self.threshold <= 1.0):
            raise ValidationError("expansion threshold must lie in (0, 1]")
        if self.max_hops < 1:
            raise ValidationError("max_hops must be >= 1")


@dataclass(frozen=True)
class Provenance:
    kind: str  # direct | expanded
    edge_id: Optional[int] = None
    hop: int = 0


@dataclass(frozen=True)
class RankedHit:
    id_time: int
    score: float
    sim: float
    temporal_decay: float
    phi: float
    provenance: Provenance


@dataclass
class QuerySpec:
    window: tuple[int, int]
    k: int
    query_vector: Optional[np.ndarray] = None
    query_text: Optional[str] = None
    kind_filter: Optional[str] = None
    meta_equals: Optional[Mapping[str, Any]] = None
    meta_exists: Optional[Sequence[str]] = None
    relationships: Optional[set[str]] = None
    expansion: Optional[Expansion] = None
    ranking: RankingConfig = field(default_factory=RankingConfig)
    fusion: Fusion = field(default_factory=Fusion)
    exact: bool = True
    k_coarse: Optional[int] = None  # coarse mode pool; None -> max(4k, 64)


# ── fusion operators ────────────────────────────────────────────────────

def fuse_weighted(
    view_sims: Mapping[str, float], weights: Mapping[str, float]
) -> float:
    """Weighted mean of per-view similarities."""
    present = [(name, sim) for name, sim in view_sims.items() if name in weights]
    if not present:
        raise NoViews("no view similarities covered by the weights")
    total = sum(weights[name] for name, _ in present)
    if total <= 0:
        raise NoViews("weights over the provided views sum to zero")
    return sum(weights[name] * sim for name, sim in present) / total


def fuse_rrf(
    lists: Sequence[Sequence[int]], k_rrf: int = DEFAULT_K_RRF
) -> list[tuple[int, float]]:
    """Reciprocal rank fusion: score = sum over lists of 1/(k_rrf + rank).

    Ranks are 1-based; output is descending by score, ties by ascending
    timestamp.
    """
    if k_rrf < 1:
        raise ValidationError("k_rrf must be >= 1")
    scores: dict[int, float] = {}
    for ranked in lists:
        for rank, ts in enumerate(ranked, start=1):
            scores[ts] = scores.get(ts, 0.0) + 1.0 / (k_rrf + rank)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


# ── structural score ────────────────────────────────────────────────────

def phi(ns, id_time: int, cfg: RankingConfig) -> float:
    """Local structural weight: saturating out-degree plus label boosts.

    min(1, log2(1 + out_degree) / 8) + max boost among outgoing labels
    that appear in phi_relation_boost, clamped to [0, 1].
    """
    if id_time not in ns.records:
        raise NotFound(f"no record at {id_time}")
    out_edges = ns.edges.edges_out(id_time)
    degree_term = min(1.0, math.log2(1 + len(out_edges)) / PHI_DEGREE_SCALE)
    boost = 0.0
    if cfg.phi_relation_boost:
        hits = [
            cfg.phi_relation_boost[e.relationship]
            for e in out_edges
            if e.relationship in cfg.phi_relation_boost
        ]
        if hits:
            boost = max(hits)
    return min(1.0, max(0.0, degree_term + boost))


# ── pipeline ────────────────────────────────────────────────────────────

def _query_vector(ns, spec: QuerySpec, embedder) -> np.ndarray:
    if spec.query_vector is not None:
        q = np.asarray(spec.query_vector, dtype=np.float32)
        if unit_norm_error(q) > UNIT_NORM_TOL:
            raise InvalidSpec("query_vector must be unit-normalized")
        return q
    if spec.query_text is not None:
        if embedder is None:
            raise EmbedderMissing("query_text given but no embedder configured")
        return np.asarray(embedder.embed(spec.query_text), dtype=np.float32)
    raise InvalidSpec("spec needs query_vector or query_text")


def _meta_match(record: MemoryRecord, spec: QuerySpec) -> bool:
    if spec.meta_equals:
        for key, value in spec.meta_equals.items():
            if record.meta.get(key) != value:
                return False
    if spec.meta_exists:
        for key in spec.meta_exists:
            if key not in record.meta:
                return False
    return True


def _view_sims(ns, candidates: list[int], q_high: np.ndarray) -> dict[str, dict[int, float]]:
    """Per-view similarity maps for every candidate, truncating q as needed.

    A view the query cannot be projected onto (larger dimension, or a
    truncation whose prefix is all zero) contributes nothing.
    """
    sims: dict[str, dict[int, float]] = {}
    for name, view in ns.views.items():
        if name == LOW_VIEW:
            view = ns.ensure_low_view(view.dimension)
        if view.dimension > q_high.shape[0]:
            continue
        if view.dimension == q_high.shape[0]:
            q = q_high
        else:
            try:
                q = vectors.matryoshka_truncate(q_high, view.dimension)
            except ZeroPrefix:
                continue
        ranked = vectors.knn_flat(view, q, len(candidates) or 1, candidates=candidates)
        sims[name] = {ts: sim for ts, sim in ranked}
    return sims


def _sim_map(ns, candidates: list[int], q_high: np.ndarray, fusion: Fusion) -> dict[int, float]:
    """The sim term per candidate under the requested fusion policy."""
    if not candidates:
        return {}
    if fusion.kind == "identity":
        ranked = vectors.knn_flat(
            ns.views[HIGH_VIEW], q_high, len(candidates), candidates=candidates
        )
        return {ts: sim for ts, sim in ranked}
    per_view = _view_sims(ns, candidates, q_high)
    if fusion.kind == "weighted":
        out = {}
        for ts in candidates:
            view_sims = {
                name: sims[ts] for name, sims in per_view.items() if ts in sims
            }
            try:
                out[ts] = fuse_weighted(view_sims, fusion.weights)
            except NoViews:  # candidate carries none of the weighted views
                out[ts] = 0.0
        return out
    # rrf: one ranked list per view, fused by reciprocal rank
    lists = []
    for name in sorted(per_view):
        sims = per_view[name]
        ordered = sorted(sims.items(), key=lambda item: (-item[1], item[0]))
        lists.append([ts for ts, _ in ordered])
    return dict(fuse_rrf(lists, fusion.k_rrf))


def _expand(
    ns,
    seeds: list[int],
    spec: QuerySpec,
    known: set[int],
) -> dict[int, Provenance]:
    """BFS over outgoing edges, admitting coherent targets hop by hop."""
    exp = spec.expansion
    admitted: dict[int, Provenance] = {}
    frontier = seeds
    for hop in range(1, exp.max_hops + 1):
        next_frontier: list[int] = []
        for src_ts in frontier:
            src = ns.records.get(src_ts)
            if src is None:
                continue
            for edge in ns.edges.edges_out(src_ts):
                if spec.relationships is not None and edge.relationship not in spec.relationships:
                    continue
                tgt = ns.records.get(edge.destination)
                if tgt is None or tgt.id_time in known or tgt.id_time in admitted:
                    continue
                if pair_coherence(src, tgt, exp.coherence) >= exp.threshold:
                    admitted[tgt.id_time] = Provenance("expanded", edge.edge_id, hop)
                    next_frontier.append(tgt.id_time)
        if not next_frontier:
            break
        frontier = next_frontier
    return admitted


def execute(ns, spec: QuerySpec, embedder=None) -> list[RankedHit]:
    """Run the full pipeline and return the top k hits."""
    if spec.k < 1:
        raise InvalidSpec(f"k must be >= 1, got {spec.k}")
    t_min, t_max = spec.window
    q_high = _query_vector(ns, spec, embedder)

    # stage 1: temporal window plus kind/meta predicates
    windowed = ns.scan_window(t_min, t_max, spec.kind_filter)
    candidates = [r.id_time for r in windowed if _meta_match(r, spec)]
    if not candidates and spec.expansion is None:
        return []

    # stage 2: semantic ranking of the candidates
    if spec.exact or not candidates:
        pool = candidates
        ranked = vectors.knn_flat(
            ns.views[HIGH_VIEW], q_high, len(candidates) or 1, candidates=candidates
        ) if candidates else []
    else:
        k_coarse = spec.k_coarse or max(4 * spec.k, 64)
        low = ns.ensure_low_view()
        try:
            q_low = vectors.matryoshka_truncate(q_high, low.dimension)
        except ZeroPrefix:  # query has no low projection: exact scan instead
            q_low = None
        if q_low is None:
            pool = candidates
            ranked = vectors.knn_flat(
                ns.views[HIGH_VIEW], q_high, len(candidates), candidates=candidates
            )
        else:
            coarse = vectors.knn_flat(
                low, q_low, min(k_coarse, len(candidates)), candidates=candidates
            )
            pool = [ts for ts, _ in coarse]
            ranked = vectors.knn_flat(
                ns.views[HIGH_VIEW], q_high, len(pool), candidates=pool
            )

    # stage 3: optional graph expansion from the top-k seeds
    provenance = {ts: Provenance("direct") for ts in pool}
    if spec.expansion is not None:
        seeds = [ts for ts, _ in ranked[: spec.k]]
        admitted = _expand(ns, seeds, spec, known=set(pool))
        provenance.update(admitted)

    # stage 4: combined score over the pool plus expansions
    scored_ids = list(provenance)
    sims = _sim_map(ns, scored_ids, q_high, spec.fusion)
    span = t_max - t_min
    tau = spec.ranking.rank_tau if spec.ranking.rank_tau is not None else max(span // 4, 1)
    hits = []
    for ts in scored_ids:
        sim = sims.get(ts, 0.0)
        decay = math.exp(-abs(t_max - ts) / tau)
        structural = phi(ns, ts, spec.ranking)
        score = (
            spec.ranking.alpha * sim
            + spec.ranking.beta * decay
            + spec.ranking.gamma * structural
        )
        hits.append(RankedHit(ts, score, sim, decay, structural, provenance[ts]))
    hits.sort(key=lambda h: (-h.score, h.id_time))
    return hits[: spec.k]
