"""Background housekeeping: bounded batches, never blocking the writer.

Tasks run in a fixed order inside one cycle so later tasks see the
earlier ones' output (views are regenerated before coherence sampling).
Each task touches at most batch_size items per cycle; a failed task is
recorded in the report and the cycle moves on.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

from memdb import logfmt
from memdb.coherence import CoherenceConfig
from memdb.engine import Namespace, now_micros
from memdb.errors import SegmentActive, ZeroPrefix
from memdb.model import HIGH_VIEW, LOW_VIEW, UNIT_NORM_TOL, unit_norm_error
from memdb.vectors import matryoshka_truncate, normalize

logger = logging.getLogger("memdb.maintenance")

TASK_ORDER = ("regen_low_views", "renormalize", "prune_edges", "sample_coherence", "compact")


@dataclass
class MaintenancePlan:
    tasks: tuple[str, ...] = TASK_ORDER
    batch_size: int = 256
    interval_s: float = 60.0
    low_dim: int = 64
    half_life_micros: int = 30 * 24 * 3600 * 1_000_000
    prune_floor: float = 0.02
    coherence_window_micros: int = 3600 * 1_000_000
    coherence_cfg: CoherenceConfig = field(default_factory=CoherenceConfig)
    pause_budget_ms: float = 50.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        unknown = set(self.tasks) - set(TASK_ORDER)
        if unknown:
            raise ValueError(f"unknown maintenance tasks: {sorted(unknown)}")
        # canonical execution order regardless of how the plan listed them
        self.tasks = tuple(t for t in TASK_ORDER if t in self.tasks)


@dataclass
class MaintenanceReport:
    cycle_id: int
    started_at: int
    finished_at: int
    counts: dict
    errors: dict

    def as_dict(self) -> dict:
        return {
            "cycle_id": self.cycle_id,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "counts": self.counts,
            "errors": self.errors,
        }


def regen_low_views(ns: Namespace, plan: MaintenancePlan) -> int:
    """Fill missing low views by truncating the high view, oldest first.

    A record whose high-view prefix is all zero has no derivable low
    view and stays high-only.
    """
    low = ns.views.get(LOW_VIEW)
    high = ns.views.get(HIGH_VIEW)
    if high is None:
        return 0
    dim = low.dimension if low is not None else min(plan.low_dim, high.dimension)
    additions = []
    for ts in ns.times:
        if low is not None and ts in low:
            continue
        record = ns.records[ts]
        try:
            vec = matryoshka_truncate(record.embeddings.high, dim)
        except ZeroPrefix:
            continue
        additions.append((ts, LOW_VIEW, vec))
        if len(additions) >= plan.batch_size:
            break
    ns.add_views(additions)
    return len(additions)


def renormalize(ns: Namespace, plan: MaintenancePlan) -> int:
    """Re-normalize vectors that drifted beyond the unit tolerance.

    Normal appends validate unit norm, so this only finds work after
    ingest of pre-normalized data from older formats.
    """
    fixes = []
    for ts in ns.times:
        record = ns.records[ts]
        for name, vec in record.embeddings.views.items():
            if unit_norm_error(vec) > UNIT_NORM_TOL:
                fixes.append((ts, name, normalize(vec)))
                if len(fixes) >= plan.batch_size:
                    break
        if len(fixes) >= plan.batch_size:
            break
    ns.add_views(fixes)
    return len(fixes)


def prune_edges(ns: Namespace, plan: MaintenancePlan, now: int) -> int:
    return ns.decay_and_prune(
        now=now,
        half_life=plan.half_life_micros,
        floor=plan.prune_floor,
        limit=plan.batch_size,
    )


def sample_coherence(ns: Namespace, plan: MaintenancePlan, now: int) -> int:
    window = (max(now - plan.coherence_window_micros, 0), now)
    ns.local_coherence(window, plan.coherence_cfg, persist=True)
    return 1


def compact(ns: Namespace, segment_id: int) -> int:
    """Rewrite one sealed segment with materialized metadata.

    Records take their current meta; patch entries whose record lives in
    this segment are dropped (folded). Patches targeting other segments
    stay, and re-applying them on replay is idempotent because patches
    only upsert keys. Returns bytes reclaimed.
    """
    info = ns.store.segments.get(segment_id)
    if info is None:
        raise SegmentActive(f"no such segment {segment_id}")
    if not info.sealed:
        raise SegmentActive(f"segment {segment_id} is active")
    with ns._write_lock:
        groups = ns.store.read_segment_groups(segment_id)
        rewritten = []
        for group in groups:
            events = []
            for etype, payload, _off in group.entries:
                event = logfmt.decode_event(etype, payload)
                if isinstance(event, logfmt.MemoryRecord):
                    current = ns.records[event.id_time]
                    events.append(
                        logfmt.MemoryRecord(
                            event.id_time,
                            event.kind,
                            event.content,
                            event.embeddings,
                            dict(current.meta),
                        )
                    )
                elif isinstance(event, logfmt.MetaPatch):
                    if ns.record_segment.get(event.id_time) != segment_id:
                        events.append(event)
                else:
                    events.append(event)
            if events:
                rewritten.append((group.group_seq, events))
        return ns.store.replace_segment(segment_id, rewritten)


def pick_compactable(ns: Namespace) -> Optional[int]:
    """Lowest sealed segment holding a foldable patch, if any."""
    sealed = sorted(
        s.segment_id for s in ns.store.segments.values() if s.sealed
    )
    if not sealed:
        return None
    for segment_id in sealed:
        for group in ns.store.read_segment_groups(segment_id):
            for etype, payload, _off in group.entries:
                if etype != logfmt.T_META_PATCH:
                    continue
                patch = logfmt.decode_meta_patch(payload)
                if ns.record_segment.get(patch.id_time) == segment_id:
                    return segment_id
    return None


def run_cycle(ns: Namespace, plan: MaintenancePlan) -> MaintenanceReport:
    """Execute one maintenance cycle and persist its report."""
    started = now_micros()
    counts: dict[str, int] = {}
    errors: dict[str, str] = {}
    now = started
    for task in plan.tasks:
        t0 = time.monotonic()
        try:
            if task == "regen_low_views":
                counts[task] = regen_low_views(ns, plan)
            elif task == "renormalize":
                counts[task] = renormalize(ns, plan)
            elif task == "prune_edges":
                counts[task] = prune_edges(ns, plan, now)
            elif task == "sample_coherence":
                counts[task] = sample_coherence(ns, plan, now)
            elif task == "compact":
                segment_id = pick_compactable(ns)
                counts[task] = compact(ns, segment_id) if segment_id is not None else 0
        except Exception as exc:  # cycle continues with remaining tasks
            logger.warning("maintenance task %s failed: %s", task, exc)
            errors[task] = f"{type(exc).__name__}: {exc}"
            counts.setdefault(task, 0)
        elapsed_ms = (time.monotonic() - t0) * 1000
        if elapsed_ms > plan.pause_budget_ms:
            logger.warning(
                "task %s batch took %.1f ms, over the %.0f ms budget; shrink batch_size",
                task, elapsed_ms, plan.pause_budget_ms,
            )
        time.sleep(0)  # yield to the writer between batches
    report = MaintenanceReport(
        cycle_id=len(ns.reports) + 1,
        started_at=started,
        finished_at=now_micros(),
        counts=counts,
        errors=errors,
    )
    ns.record_report(report.as_dict())
    return report
