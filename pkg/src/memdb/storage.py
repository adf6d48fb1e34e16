"""Durable segmented log for one namespace.

Layout under <root>/<namespace>/:

    seg-000001.log   segment files (header + commit groups)
    seg-000001.idx   sparse time index sidecar, written when a segment seals
    manifest.json    sealed-segment catalog (a rebuildable cache)

One writer per namespace appends whole commit groups and fsyncs before
acknowledging. Recovery replays committed groups in segment order,
truncates a torn tail on the active segment, and refuses logs with
interior corruption.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from memdb import logfmt
from memdb._kernels import crc32c
from memdb.errors import CorruptInterior, SegmentActive, StorageError
from memdb.logfmt import Group

logger = logging.getLogger("memdb.storage")

SEGMENT_MAX_BYTES = 64 * 1024 * 1024
SEGMENT_MAX_SPAN = 24 * 3600 * 1_000_000  # microseconds
IDX_MAGIC = b"MEMIDX1\n"
IDX_STRIDE = 32


@dataclass(frozen=True)
class SegmentPolicy:
    max_bytes: int = SEGMENT_MAX_BYTES
    max_span_micros: int = SEGMENT_MAX_SPAN


@dataclass
class SegmentInfo:
    segment_id: int
    path: Path
    min_time: Optional[int] = None
    max_time: Optional[int] = None
    record_count: int = 0
    size: int = 0
    sealed: bool = False


def _segment_name(segment_id: int) -> str:
    return f"seg-{segment_id:06d}.log"


class NamespaceStorage:
    """Append side of the log; replay is exposed as an event iterator."""

    def __init__(self, directory: Path, policy: SegmentPolicy = SegmentPolicy()):
        self.directory = Path(directory)
        self.policy = policy
        self.directory.mkdir(parents=True, exist_ok=True)
        self.segments: dict[int, SegmentInfo] = {}
        self.active: Optional[SegmentInfo] = None
        self._fd: Optional[int] = None
        self.next_group_seq = 1

    # ── recovery ────────────────────────────────────────────────────

    def recover(self) -> Iterator[tuple[int, Group]]:
        """Yield (segment_id, group) for every committed group, in order.

        Cleans up compaction temp files, truncates a torn tail on the
        final segment, then opens it for appending. Raises
        CorruptInterior when damage is not a tail tear.
        """
        for tmp in self.directory.glob("*.tmp"):
            logger.warning("removing stale temp file %s", tmp)
            tmp.unlink()
        paths = sorted(self.directory.glob("seg-*.log"))
        if not paths:
            self._start_segment(1)
            self._write_manifest()
            return
        infos = []
        for path in paths:
            with open(path, "rb") as fh:
                head = fh.read(logfmt.HEADER_LEN)
            seg_id = logfmt.parse_segment_header(head)
            if path.name != _segment_name(seg_id):
                raise CorruptInterior(f"segment id {seg_id} does not match {path.name}")
            infos.append(SegmentInfo(seg_id, path))
        infos.sort(key=lambda s: s.segment_id)
        last = infos[-1]
        for info in infos:
            buf = info.path.read_bytes()
            is_last = info is last
            groups, committed_end = logfmt.read_groups(buf, final_segment=is_last)
            if committed_end < len(buf):
                logger.warning(
                    "truncating torn tail of %s at offset %d (was %d)",
                    info.path.name, committed_end, len(buf),
                )
                with open(info.path, "r+b") as fh:
                    fh.truncate(committed_end)
                    fh.flush()
                    os.fsync(fh.fileno())
            info.size = committed_end
            for group in groups:
                self.next_group_seq = max(self.next_group_seq, group.group_seq + 1)
                for etype, payload, _off in group.entries:
                    if etype == logfmt.T_RECORD:
                        ts = struct.unpack_from("<Q", payload, 0)[0]
                        info.record_count += 1
                        if info.min_time is None:
                            info.min_time = ts
                        info.max_time = ts
                yield info.segment_id, group
            info.sealed = not is_last
            self.segments[info.segment_id] = info
        self.active = last
        self._fd = os.open(last.path, os.O_WRONLY | os.O_APPEND)
        self._write_manifest()

    # ── appending ───────────────────────────────────────────────────

    def _start_segment(self, segment_id: int) -> None:
        info = SegmentInfo(segment_id, self.directory / _segment_name(segment_id))
        header = logfmt.segment_header(segment_id)
        fd = os.open(info.path, os.O_WRONLY | os.O_CREAT | os.O_EXCL)
        os.write(fd, header)
        os.fsync(fd)
        info.size = len(header)
        self.segments[segment_id] = info
        self.active = info
        self._fd = fd

    def seal_active(self) -> None:
        """Close the active segment, write its index sidecar, roll to a new one."""
        assert self.active is not None and self._fd is not None
        old = self.active
        os.close(self._fd)
        old.sealed = True
        self._write_index_sidecar(old)
        self._start_segment(old.segment_id + 1)
        self._write_manifest()

    def _should_roll(self, incoming_time: Optional[int]) -> bool:
        active = self.active
        if active is None or active.size <= logfmt.HEADER_LEN:
            return False
        if active.size >= self.policy.max_bytes:
            return True
        if (
            incoming_time is not None
            and active.min_time is not None
            and incoming_time - active.min_time > self.policy.max_span_micros
        ):
            return True
        return False

    def append_group(self, events: list[logfmt.Event]) -> int:
        """Write one commit group durably; returns its group sequence number."""
        if self._fd is None:
            raise StorageError("storage not recovered/opened")
        record_times = [e.id_time for e in events if isinstance(e, logfmt.MemoryRecord)]
        if self._should_roll(record_times[0] if record_times else None):
            self.seal_active()
        seq = self.next_group_seq
        blob, _offsets = logfmt.encode_group(seq, events)
        try:
            os.write(self._fd, blob)
            os.fsync(self._fd)
        except OSError as exc:
            if exc.errno == 28:  # ENOSPC
                from memdb.errors import StorageFull

                raise StorageFull(str(exc)) from exc
            raise
        self.next_group_seq = seq + 1
        active = self.active
        assert active is not None
        active.size += len(blob)
        if record_times:
            if active.min_time is None:
                active.min_time = record_times[0]
            active.max_time = record_times[-1]
            active.record_count += len(record_times)
        return seq

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    # ── manifest and sidecars ───────────────────────────────────────

    def _write_manifest(self) -> None:
        manifest = {
            "version": 1,
            "active": self.active.segment_id if self.active else None,
            "sealed": [
                {
                    "segment_id": s.segment_id,
                    "path": s.path.name,
                    "min_time": s.min_time,
                    "max_time": s.max_time,
                    "records": s.record_count,
                    "bytes": s.size,
                }
                for s in sorted(self.segments.values(), key=lambda s: s.segment_id)
                if s.sealed
            ],
        }
        tmp = self.directory / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        tmp.replace(self.directory / "manifest.json")

    def _write_index_sidecar(self, info: SegmentInfo) -> None:
        """Sparse (timestamp, offset) pairs for every IDX_STRIDE-th record."""
        buf = info.path.read_bytes()
        pairs: list[tuple[int, int]] = []
        seen = 0
        groups, _ = logfmt.read_groups(buf, final_segment=False)
        for group in groups:
            for etype, payload, off in group.entries:
                if etype != logfmt.T_RECORD:
                    continue
                if seen % IDX_STRIDE == 0:
                    ts = struct.unpack_from("<Q", payload, 0)[0]
                    pairs.append((ts, off))
                seen += 1
        body = struct.pack("<III", 1, info.segment_id, len(pairs))
        body += b"".join(struct.pack("<QQ", ts, off) for ts, off in pairs)
        blob = IDX_MAGIC + body + struct.pack("<I", crc32c(body))
        path = info.path.with_suffix(".idx")
        tmp = path.with_suffix(".idx.tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)

    def read_index_sidecar(self, segment_id: int) -> list[tuple[int, int]]:
        path = self.directory / f"seg-{segment_id:06d}.idx"
        blob = path.read_bytes()
        if blob[:8] != IDX_MAGIC:
            raise CorruptInterior(f"bad index sidecar magic: {path}")
        body, (crc,) = blob[8:-4], struct.unpack("<I", blob[-4:])
        if crc32c(body) != crc:
            raise CorruptInterior(f"index sidecar checksum mismatch: {path}")
        _version, _seg, count = struct.unpack_from("<III", body, 0)
        return [
            struct.unpack_from("<QQ", body, 12 + 16 * i) for i in range(count)
        ]

    # ── compaction support ──────────────────────────────────────────

    def read_segment_groups(self, segment_id: int) -> list[Group]:
        info = self.segments[segment_id]
        buf = info.path.read_bytes()
        groups, _ = logfmt.read_groups(buf, final_segment=not info.sealed)
        return groups

    def replace_segment(self, segment_id: int, groups: list[tuple[int, list[logfmt.Event]]]) -> int:
        """Atomically rewrite a sealed segment; returns bytes reclaimed."""
        info = self.segments[segment_id]
        if not info.sealed:
            raise SegmentActive(f"segment {segment_id} is active")
        old_size = info.path.stat().st_size
        blob = logfmt.segment_header(segment_id)
        for group_seq, events in groups:
            body, _ = logfmt.encode_group(group_seq, events)
            blob += body
        tmp = info.path.with_suffix(".log.tmp")
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(info.path)
        dir_fd = os.open(self.directory, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)
        info.size = len(blob)
        self._write_index_sidecar(info)
        self._write_manifest()
        return old_size - len(blob)
