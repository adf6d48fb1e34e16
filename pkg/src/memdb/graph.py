"""Labeled directed multigraph over memory timestamps.

Edges are timestamped, weighted rows; parallel edges between one pair are
first-class. Pruning is logical and logged, never physical, so the graph
at any past instant can be reconstructed with ``as_of``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from memdb.errors import EndpointMissing
from memdb.model import Edge, MemoryRecord
from memdb.vectors import similarity


@dataclass
class AdjacencyIndex:
    """out / in / (source, relationship) posting lists, ordered by edge_id."""

    out: dict[int, list[int]] = field(default_factory=dict)
    incoming: dict[int, list[int]] = field(default_factory=dict)
    by_relationship: dict[tuple[int, str], list[int]] = field(default_factory=dict)

    def add(self, edge: Edge) -> None:
        self.out.setdefault(edge.source, []).append(edge.edge_id)
        self.incoming.setdefault(edge.destination, []).append(edge.edge_id)
        self.by_relationship.setdefault(
            (edge.source, edge.relationship), []
        ).append(edge.edge_id)


class EdgeStore:
    """In-memory edge state for one namespace, rebuilt from the log."""

    def __init__(self):
        self.edges: dict[int, Edge] = {}
        self.adjacency = AdjacencyIndex()
        self.pruned_at: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.edges)

    def apply_edge(self, edge: Edge) -> None:
        self.edges[edge.edge_id] = edge
        self.adjacency.add(edge)

    def apply_prune(self, edge_id: int, pruned_at: int) -> None:
        if edge_id in self.edges:
            self.pruned_at[edge_id] = pruned_at

    def _visible(self, edge: Edge, as_of: Optional[int]) -> bool:
        if as_of is None:
            return edge.edge_id not in self.pruned_at
        if edge.created_at > as_of:
            return False
        pruned = self.pruned_at.get(edge.edge_id)
        return pruned is None or pruned > as_of

    def edges_out(
        self,
        source: int,
        relationship: Optional[str] = None,
        as_of: Optional[int] = None,
    ) -> list[Edge]:
        """Outgoing edges (filtered by label) as of a point in time.

        as_of=None means "now": pruned edges are excluded. A historical
        as_of includes edges created by then and not yet pruned by then.
        Missing sources yield an empty list.
        """
        if relationship is None:
            ids = self.adjacency.out.get(source, [])
        else:
            ids = self.adjacency.by_relationship.get((source, relationship), [])
        return [e for i in ids if self._visible(e := self.edges[i], as_of)]

    def edges_in(self, destination: int, as_of: Optional[int] = None) -> list[Edge]:
        ids = self.adjacency.incoming.get(destination, [])
        return [e for i in ids if self._visible(e := self.edges[i], as_of)]

    def out_degree(self, source: int, as_of: Optional[int] = None) -> int:
        return len(self.edges_out(source, as_of=as_of))

    def all_edges(self, as_of: Optional[int] = None) -> Iterable[Edge]:
        for edge_id in sorted(self.edges):
            edge = self.edges[edge_id]
            if self._visible(edge, as_of):
                yield edge


def displacement(
    edge: Edge, get_record: Callable[[int], Optional[MemoryRecord]]
) -> tuple[int, float]:
    """(Δt, s) for one edge: signed microseconds and 1 − cos of high views.

    s lies in [0, 2]: 0 for identical directions, 1 orthogonal, 2 antipodal.
    """
    src = get_record(edge.source)
    dst = get_record(edge.destination)
    if src is None or dst is None:
        raise EndpointMissing(
            f"edge {edge.edge_id}: endpoint record missing "
            f"({edge.source} -> {edge.destination})"
        )
    dt = dst.id_time - src.id_time
    s = 1.0 - similarity(src.embeddings.high, dst.embeddings.high)
    return dt, min(max(s, 0.0), 2.0)


def effective_strength(edge: Edge, now: int, half_life: int) -> float:
    """Stored strength decayed by 2^(−age/half_life)."""
    age = max(now - edge.created_at, 0)
    return edge.weight.strength * math.pow(2.0, -age / half_life)


def select_prunable(
    store: EdgeStore,
    now: int,
    half_life: int,
    floor: float,
    limit: Optional[int] = None,
) -> list[int]:
    """Edge ids whose decayed strength AND confidence both fall below floor.

    Requiring both keeps confident negative-strength edges alive; the
    strength range is signed, so magnitude is what decays toward zero.
    """
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    if not (0.0 < floor < 1.0):
        raise ValueError("floor must lie in (0, 1)")
    picked = []
    for edge in store.all_edges(as_of=None):
        if abs(effective_strength(edge, now, half_life)) < floor and edge.weight.confidence < floor:
            picked.append(edge.edge_id)
            if limit is not None and len(picked) >= limit:
                break
    return picked
