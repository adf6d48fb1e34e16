"""Engine facade: databases, namespaces, and the committed in-memory state.

A Database owns a data directory (exclusively, via a lock file) and hands
out Namespace handles. Each namespace has one writer lock; every public
mutation is a single commit group, applied to the in-memory state only
after the bytes are durable. Readers see the committed prefix.
"""

from __future__ import annotations

import bisect
import fcntl
import hashlib
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from memdb import coherence, graph, logfmt, storage
from memdb.coherence import CoherenceSample
from memdb.errors import (
    DataDirLocked,
    EmptyBatch,
    InvalidWindow,
    NotFound,
    SourceNotFound,
    ValidationError,
)
from memdb.logfmt import (
    EdgePrune,
    MetaPatch,
    ReportEvent,
    SampleEvent,
    ViewAdd,
)
from memdb.model import (
    Edge,
    EmbeddingSet,
    HIGH_VIEW,
    LOW_VIEW,
    MemoryRecord,
    Weight,
    mint_timestamp,
    validate_meta,
    validate_namespace,
    validate_record,
)
from memdb.vectors import VectorView, matryoshka_truncate

logger = logging.getLogger("memdb.engine")


def now_micros() -> int:
    return time.time_ns() // 1000


@dataclass
class Draft:
    """Input for an append: everything except the engine-minted id_time."""

    kind: str
    content: Optional[str] = None
    views: Optional[Mapping[str, Any]] = None
    meta: Optional[dict] = None


class Namespace:
    """All operations on one isolated timeline."""

    def __init__(self, db: "Database", name: str, directory: Path):
        self.db = db
        self.name = name
        self._write_lock = threading.RLock()
        self.store = storage.NamespaceStorage(directory, db.segment_policy)
        self.records: dict[int, MemoryRecord] = {}
        self.times: list[int] = []
        self.views: dict[str, VectorView] = {}
        self.edges = graph.EdgeStore()
        self.samples: list[CoherenceSample] = []
        self.reports: list[dict] = []
        self.record_segment: dict[int, int] = {}
        self.last_minted = 0
        self.next_edge_id = 1
        self._replay()

    # ── replay ──────────────────────────────────────────────────────

    def _replay(self) -> None:
        for segment_id, group in self.store.recover():
            for etype, payload, _off in group.entries:
                self._apply(logfmt.decode_event(etype, payload), segment_id)

    def _apply(self, event: logfmt.Event, segment_id: Optional[int]) -> None:
        if isinstance(event, MemoryRecord):
            self.records[event.id_time] = event
            self.times.append(event.id_time)
            for name, vec in event.embeddings.views.items():
                self._view(name, vec.shape[0]).add(event.id_time, vec)
            if segment_id is not None:
                self.record_segment[event.id_time] = segment_id
            if event.id_time > self.last_minted:
                self.last_minted = event.id_time
        elif isinstance(event, Edge):
            self.edges.apply_edge(event)
            self.next_edge_id = max(self.next_edge_id, event.edge_id + 1)
            if event.created_at > self.last_minted:
                self.last_minted = event.created_at
        elif isinstance(event, MetaPatch):
            rec = self.records.get(event.id_time)
            if rec is not None:
                rec.meta.update(event.patch)
        elif isinstance(event, EdgePrune):
            self.edges.apply_prune(event.edge_id, event.pruned_at)
            if event.pruned_at > self.last_minted:
                self.last_minted = event.pruned_at
        elif isinstance(event, ViewAdd):
            rec = self.records.get(event.id_time)
            if rec is not None:
                rec.embeddings.views[event.name] = event.vector
                self._view(event.name, event.vector.shape[0]).add(
                    event.id_time, event.vector
                )
        elif isinstance(event, SampleEvent):
            self.samples.append(
                CoherenceSample(
                    event.window_lo,
                    event.window_hi,
                    event.edge_count,
                    event.c_local,
                    event.computed_at,
                )
            )
        elif isinstance(event, ReportEvent):
            self.reports.append(event.report)
        else:  # pragma: no cover - decoder and applier enumerate the same types
            raise TypeError(f"unhandled event {type(event).__name__}")

    def _view(self, name: str, dimension: int) -> VectorView:
        view = self.views.get(name)
        if view is None:
            view = VectorView(name, dimension)
            self.views[name] = view
        return view

    @property
    def view_dims(self) -> dict[str, int]:
        return {name: v.dimension for name, v in self.views.items()}

    # ── appends ─────────────────────────────────────────────────────

    def _mint(self, wall_clock: Optional[int]) -> int:
        ts = mint_timestamp(wall_clock or now_micros(), self.last_minted)
        self.last_minted = ts
        return ts

    def _build_record(self, draft: Draft, wall_clock: Optional[int]) -> MemoryRecord:
        if draft.views is None or HIGH_VIEW not in draft.views:
            from memdb.errors import MissingHighView

            raise MissingHighView('append requires a "high" embedding view')
        record = MemoryRecord(
            id_time=self._mint(wall_clock),
            kind=draft.kind,
            content=draft.content,
            embeddings=EmbeddingSet.build(draft.views),
            meta=validate_meta(draft.meta or {}),
        )
        validate_record(record, self.view_dims)
        return record

    def append(self, draft: Draft, wall_clock: Optional[int] = None) -> MemoryRecord:
        """Mint a timestamp, validate, persist, and return the record."""
        with self._write_lock:
            rollback = self.last_minted
            try:
                record = self._build_record(draft, wall_clock)
                self.store.append_group([record])
            except Exception:
                self.last_minted = rollback
                raise
            self._apply(record, self.store.active.segment_id)
            return record

    def append_batch(
        self, drafts: Iterable[Draft], wall_clock: Optional[int] = None
    ) -> list[MemoryRecord]:
        """Atomic multi-record append: all durable or none."""
        drafts = list(drafts)
        if not drafts:
            raise EmptyBatch("batch must contain at least one record")
        with self._write_lock:
            rollback = self.last_minted
            try:
                records = [self._build_record(d, wall_clock) for d in drafts]
                self.store.append_group(list(records))
            except Exception:
                self.last_minted = rollback
                raise
            seg = self.store.active.segment_id
            for record in records:
                self._apply(record, seg)
            return records

    def update_meta(self, id_time: int, patch: Mapping[str, Any]) -> dict:
        """Merge patch into a record's metadata (logged, replayable)."""
        with self._write_lock:
            record = self.records.get(id_time)
            if record is None:
                raise NotFound(f"no record at {id_time}")
            clean = validate_meta(patch)
            event = MetaPatch(id_time, clean)
            self.store.append_group([event])
            self._apply(event, None)
            return dict(record.meta)

    # ── reads ───────────────────────────────────────────────────────

    def get(self, id_time: int) -> MemoryRecord:
        record = self.records.get(id_time)
        if record is None:
            raise NotFound(f"no record at {id_time}")
        return record

    def scan_window(
        self, t_min: int, t_max: int, kind_filter: Optional[str] = None
    ) -> list[MemoryRecord]:
        """Records with t_min <= id_time <= t_max, ascending, kind-filtered.

        Cost is a bisect plus the output size; the times list is always
        sorted because minting is monotone.
        """
        if t_min > t_max:
            raise InvalidWindow(f"t_min {t_min} > t_max {t_max}")
        lo = bisect.bisect_left(self.times, t_min)
        hi = bisect.bisect_right(self.times, t_max)
        out = [self.records[t] for t in self.times[lo:hi]]
        if kind_filter is not None:
            out = [r for r in out if r.kind == kind_filter]
        return out

    # ── edges ───────────────────────────────────────────────────────

    def add_edge(
        self,
        source: int,
        destination: int,
        relationship: str,
        weight: Optional[Weight] = None,
        meta: Optional[dict] = None,
    ) -> Edge:
        """Insert one directed edge; parallel duplicates are legal."""
        if not relationship:
            raise ValidationError("relationship label must be nonempty")
        with self._write_lock:
            if source not in self.records:
                raise SourceNotFound(f"source record {source} does not exist")
            edge = Edge(
                edge_id=self.next_edge_id,
                source=source,
                destination=destination,
                relationship=relationship,
                weight=weight or Weight(),
                meta=validate_meta(meta or {}),
                created_at=self._mint(None),
            )
            self.store.append_group([edge])
            self._apply(edge, None)
            return edge

    def edges_out(
        self,
        source: int,
        relationship: Optional[str] = None,
        as_of: Optional[int] = None,
    ) -> list[Edge]:
        return self.edges.edges_out(source, relationship, as_of)

    def displacement(self, edge: Edge) -> tuple[int, float]:
        return graph.displacement(edge, self.records.get)

    def decay_and_prune(
        self,
        now: Optional[int] = None,
        half_life: int = 30 * 24 * 3600 * 1_000_000,
        floor: float = 0.02,
        limit: Optional[int] = None,
    ) -> int:
        """Mark decayed low-weight, low-confidence edges pruned (logged)."""
        with self._write_lock:
            now = now if now is not None else now_micros()
            picked = graph.select_prunable(self.edges, now, half_life, floor, limit)
            if not picked:
                return 0
            pruned_at = self._mint(None)
            events = [EdgePrune(edge_id, pruned_at) for edge_id in picked]
            self.store.append_group(list(events))
            for event in events:
                self._apply(event, None)
            return len(picked)

    def project_local_plane(self, vertex: int) -> list[tuple[int, int, float]]:
        """The vertex's local flow field: (edge_id, Δt, s) per outgoing edge."""
        return coherence.project_local_plane(self, vertex)

    def local_coherence(
        self,
        window: tuple[int, int],
        cfg: Optional[coherence.CoherenceConfig] = None,
        persist: bool = False,
    ) -> CoherenceSample:
        """Windowed mean pair coherence; optionally logged for the series."""
        sample = coherence.local_coherence(
            self, window, cfg or coherence.CoherenceConfig(), computed_at=now_micros()
        )
        if persist:
            self.record_sample(sample)
        return sample

    # ── persisted derived data ──────────────────────────────────────

    def record_sample(self, sample: CoherenceSample) -> None:
        with self._write_lock:
            event = SampleEvent(
                sample.window_lo,
                sample.window_hi,
                sample.computed_at,
                sample.edge_count,
                sample.c_local,
            )
            self.store.append_group([event])
            self._apply(event, None)

    def record_report(self, report: dict) -> None:
        with self._write_lock:
            event = ReportEvent(report)
            self.store.append_group([event])
            self._apply(event, None)

    def add_views(self, additions: list[tuple[int, str, np.ndarray]]) -> None:
        """Persist derived views (low-view regeneration, renormalization)."""
        if not additions:
            return
        with self._write_lock:
            events = [ViewAdd(ts, name, vec) for ts, name, vec in additions]
            self.store.append_group(list(events))
            for event in events:
                self._apply(event, None)

    def build_ivf_sidecar(
        self,
        segment_id: int,
        view_name: str = HIGH_VIEW,
        n_lists: Optional[int] = None,
        seed: int = 0,
    ) -> Path:
        """Train an IVF index over one sealed segment's records, persist it.

        The sidecar lives next to the segment (seg-XXXXXX.ivf) under the
        same endianness and checksum rules as the log.
        """
        from memdb import vectors
        from memdb.errors import SegmentActive

        info = self.store.segments[segment_id]
        if not info.sealed:
            raise SegmentActive(f"segment {segment_id} is active")
        member_view = VectorView(view_name, self.views[view_name].dimension)
        for ts, seg in self.record_segment.items():
            if seg == segment_id:
                vec = self.records[ts].embeddings.views.get(view_name)
                if vec is not None:
                    member_view.add(ts, vec)
        index = vectors.IvfIndex(view_name)
        index.train(member_view, n_lists=n_lists, seed=seed)
        path = info.path.with_suffix(".ivf")
        vectors.save_ivf(index, path)
        return path

    def load_ivf_sidecar(self, segment_id: int):
        from memdb import vectors

        info = self.store.segments[segment_id]
        return vectors.load_ivf(info.path.with_suffix(".ivf"))

    def ensure_low_view(self, low_dim: int = 64) -> VectorView:
        """In-memory low view covering every record, truncating on demand.

        Records whose low view was supplied or regenerated keep it; the
        rest get a derived truncation that is bitwise what maintenance
        would persist. A record whose high-view prefix is all zero has no
        derivable low view and is skipped. Purely a cache: nothing is
        logged here.
        """
        view = self.views.get(LOW_VIEW)
        if view is None:
            high = self.views.get(HIGH_VIEW)
            dim = min(low_dim, high.dimension) if high is not None else low_dim
            view = self._view(LOW_VIEW, dim)
        if len(view) < len(self.records):
            from memdb.errors import ZeroPrefix

            for ts, record in self.records.items():
                if ts not in view:
                    try:
                        view.add(
                            ts,
                            matryoshka_truncate(record.embeddings.high, view.dimension),
                        )
                    except ZeroPrefix:
                        continue
        return view

    # ── introspection ───────────────────────────────────────────────

    def stats(self) -> dict:
        lifetime = [s.c_local for s in self.samples if s.c_local is not None]
        return {
            "namespace": self.name,
            "records": len(self.records),
            "edges": len(self.edges),
            "pruned_edges": len(self.edges.pruned_at),
            "segments": len(self.store.segments),
            "view_dims": self.view_dims,
            "coherence_samples": len(self.samples),
            "mean_coherence": (sum(lifetime) / len(lifetime)) if lifetime else None,
            "maintenance_cycles": len(self.reports),
            "last_minted": self.last_minted,
        }

    def state_digest(self) -> str:
        """Canonical digest of the committed state, for replay determinism."""
        h = hashlib.sha256()
        for ts in self.times:
            rec = self.records[ts]
            h.update(struct.pack("<Q", ts))
            h.update(rec.kind.encode())
            h.update(b"\x00" if rec.content is None else rec.content.encode())
            h.update(logfmt.canonical_json(rec.meta))
            for name in sorted(rec.embeddings.views):
                h.update(name.encode())
                h.update(np.ascontiguousarray(rec.embeddings.views[name], "<f4").tobytes())
        for edge_id in sorted(self.edges.edges):
            e = self.edges.edges[edge_id]
            h.update(
                struct.pack("<QQQQ", e.edge_id, e.source, e.destination, e.created_at)
            )
            h.update(e.relationship.encode())
            h.update(struct.pack("<dd", e.weight.strength, e.weight.confidence))
            h.update(logfmt.canonical_json(e.meta))
            h.update(struct.pack("<q", self.edges.pruned_at.get(edge_id, -1)))
        for s in self.samples:
            h.update(
                struct.pack(
                    "<QQQId",
                    s.window_lo,
                    s.window_hi,
                    s.computed_at,
                    s.edge_count,
                    -1.0 if s.c_local is None else s.c_local,
                )
            )
        h.update(logfmt.canonical_json(self.reports))
        return h.hexdigest()

    def close(self) -> None:
        self.store.close()


class Database:
    """Root handle over a data directory holding one or more namespaces."""

    def __init__(
        self,
        root: Path | str,
        segment_policy: storage.SegmentPolicy = storage.SegmentPolicy(),
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.segment_policy = segment_policy
        self._namespaces: dict[str, Namespace] = {}
        self._lock = threading.Lock()
        self._lock_fd = os.open(self.root / "LOCK", os.O_CREAT | os.O_RDWR)
        try:
            fcntl.flock(self._lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(self._lock_fd)
            raise DataDirLocked(f"data directory {self.root} is locked by another process")

    def namespace(self, name: str) -> Namespace:
        validate_namespace(name)
        with self._lock:
            ns = self._namespaces.get(name)
            if ns is None:
                ns = Namespace(self, name, self.root / name)
                self._namespaces[name] = ns
            return ns

    def list_namespaces(self) -> list[str]:
        on_disk = {
            p.name
            for p in self.root.iterdir()
            if p.is_dir() and (p / "manifest.json").exists()
        }
        return sorted(on_disk | set(self._namespaces))

    def stats(self) -> dict:
        return {name: self.namespace(name).stats() for name in self.list_namespaces()}

    def close(self) -> None:
        with self._lock:
            for ns in self._namespaces.values():
                ns.close()
            self._namespaces.clear()
            if self._lock_fd is not None:
                fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
                os.close(self._lock_fd)
                self._lock_fd = None

    def __enter__(self) -> "Database":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
