"""Binary layout of the append-only log.

A segment file is a 16-byte header followed by commit groups. A group is
a run of entries terminated by a COMMIT entry that carries the group
sequence number, the entry count, and a CRC-32C over the raw bytes of the
preceding entries. Every entry is independently framed and checksummed:

    entry  := u8 type | u32 payload_len | payload | u32 crc
    crc    := CRC-32C over (type byte + length field + payload)
    commit := entry with type COMMIT, payload u64 seq | u32 count | u32 group_crc

All integers little-endian, strings UTF-8, vector elements IEEE-754
binary32. Replay classifies anomalies two ways: bytes missing at the end
of the final segment are a torn write (the incomplete group is
discarded); a checksum or framing failure on bytes that are fully
present is CorruptInterior. One undetectable case: a corrupted length
field that points past EOF of the final segment reads as a tear.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Any, Iterator, Optional

import numpy as np

from memdb._kernels import crc32c
from memdb.errors import CorruptInterior
from memdb.model import Edge, EmbeddingSet, MemoryRecord, Weight

MAGIC = b"MEMSEG1\n"
FORMAT_VERSION = 1
HEADER_LEN = 16
MAX_PAYLOAD = 64 * 1024 * 1024

# entry type tags
T_RECORD = 0x01
T_EDGE = 0x02
T_META_PATCH = 0x03
T_EDGE_PRUNE = 0x04
T_SAMPLE = 0x05
T_VIEW_ADD = 0x06
T_REPORT = 0x07
T_COMMIT = 0x0F

_KNOWN_TYPES = frozenset(
    (T_RECORD, T_EDGE, T_META_PATCH, T_EDGE_PRUNE, T_SAMPLE, T_VIEW_ADD, T_REPORT, T_COMMIT)
)

_ENTRY_HDR = struct.Struct("<BI")
_CRC = struct.Struct("<I")
_COMMIT = struct.Struct("<QII")


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


# ── payload events ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class MetaPatch:
    id_time: int
    patch: dict


@dataclass(frozen=True)
class EdgePrune:
    edge_id: int
    pruned_at: int


@dataclass(frozen=True)
class SampleEvent:
    window_lo: int
    window_hi: int
    computed_at: int
    edge_count: int
    c_local: Optional[float]


@dataclass(frozen=True)
class ViewAdd:
    id_time: int
    name: str
    vector: np.ndarray


@dataclass(frozen=True)
class ReportEvent:
    report: dict


Event = Any  # MemoryRecord | Edge | MetaPatch | EdgePrune | SampleEvent | ViewAdd | ReportEvent


# ── primitive packing ───────────────────────────────────────────────────

class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptInterior("payload shorter than its declared fields")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def str16(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def json32(self) -> Any:
        raw = self.take(self.u32())
        return json.loads(raw.decode("utf-8"))

    def vec32(self, dim: int) -> np.ndarray:
        raw = self.take(4 * dim)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)


def _str16(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError("string field exceeds 65535 bytes")
    return struct.pack("<H", len(b)) + b


def _json32(obj: Any) -> bytes:
    b = canonical_json(obj)
    return struct.pack("<I", len(b)) + b


def _vec32(vec: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(vec, dtype="<f4")
    return struct.pack("<I", arr.shape[0]) + arr.tobytes()


# ── payload encode/decode ───────────────────────────────────────────────

def encode_record(rec: MemoryRecord) -> bytes:
    parts = [struct.pack("<Q", rec.id_time), _str16(rec.kind)]
    if rec.content is None:
        parts.append(b"\x00")
    else:
        cb = rec.content.encode("utf-8")
        parts.append(b"\x01" + struct.pack("<I", len(cb)) + cb)
    parts.append(_json32(rec.meta))
    views = rec.embeddings.views
    parts.append(struct.pack("<B", len(views)))
    for name in sorted(views):
        parts.append(_str16(name))
        parts.append(_vec32(views[name]))
    return b"".join(parts)


def decode_record(payload: bytes) -> MemoryRecord:
    r = _Reader(payload)
    id_time = r.u64()
    kind = r.str16()
    content = None
    if r.u8() == 1:
        content = r.take(r.u32()).decode("utf-8")
    meta = r.json32()
    views = {}
    for _ in range(r.u8()):
        name = r.str16()
        views[name] = r.vec32(r.u32())
    return MemoryRecord(id_time, kind, content, EmbeddingSet(views), meta)


def encode_edge(edge: Edge) -> bytes:
    return b"".join(
        [
            struct.pack(
                "<QQQQ", edge.edge_id, edge.source, edge.destination, edge.created_at
            ),
            _str16(edge.relationship),
            struct.pack("<dd", edge.weight.strength, edge.weight.confidence),
            _json32(edge.meta),
        ]
    )


def decode_edge(payload: bytes) -> Edge:
    r = _Reader(payload)
    edge_id, source, destination, created_at = (r.u64(), r.u64(), r.u64(), r.u64())
    relationship = r.str16()
    strength, confidence = r.f64(), r.f64()
    meta = r.json32()
    return Edge(
        edge_id, source, destination, relationship, Weight(strength, confidence), meta, created_at
    )


def encode_meta_patch(p: MetaPatch) -> bytes:
    return struct.pack("<Q", p.id_time) + _json32(p.patch)


def decode_meta_patch(payload: bytes) -> MetaPatch:
    r = _Reader(payload)
    return MetaPatch(r.u64(), r.json32())


def encode_edge_prune(p: EdgePrune) -> bytes:
    return struct.pack("<QQ", p.edge_id, p.pruned_at)


def decode_edge_prune(payload: bytes) -> EdgePrune:
    r = _Reader(payload)
    return EdgePrune(r.u64(), r.u64())


def encode_sample(s: SampleEvent) -> bytes:
    head = struct.pack("<QQQI", s.window_lo, s.window_hi, s.computed_at, s.edge_count)
    if s.c_local is None:
        return head + b"\x00"
    return head + b"\x01" + struct.pack("<d", s.c_local)


def decode_sample(payload: bytes) -> SampleEvent:
    r = _Reader(payload)
    lo, hi, at = r.u64(), r.u64(), r.u64()
    count = r.u32()
    c_local = r.f64() if r.u8() == 1 else None
    return SampleEvent(lo, hi, at, count, c_local)


def encode_view_add(v: ViewAdd) -> bytes:
    return struct.pack("<Q", v.id_time) + _str16(v.name) + _vec32(v.vector)


def decode_view_add(payload: bytes) -> ViewAdd:
    r = _Reader(payload)
    id_time = r.u64()
    name = r.str16()
    vec = r.vec32(r.u32())
    return ViewAdd(id_time, name, vec)


def encode_report(rep: ReportEvent) -> bytes:
    return _json32(rep.report)


def decode_report(payload: bytes) -> ReportEvent:
    r = _Reader(payload)
    return ReportEvent(r.json32())


_ENCODERS = {
    T_RECORD: encode_record,
    T_EDGE: encode_edge,
    T_META_PATCH: encode_meta_patch,
    T_EDGE_PRUNE: encode_edge_prune,
    T_SAMPLE: encode_sample,
    T_VIEW_ADD: encode_view_add,
    T_REPORT: encode_report,
}

_DECODERS = {
    T_RECORD: decode_record,
    T_EDGE: decode_edge,
    T_META_PATCH: decode_meta_patch,
    T_EDGE_PRUNE: decode_edge_prune,
    T_SAMPLE: decode_sample,
    T_VIEW_ADD: decode_view_add,
    T_REPORT: decode_report,
}

_EVENT_TYPES = [
    (MemoryRecord, T_RECORD),
    (Edge, T_EDGE),
    (MetaPatch, T_META_PATCH),
    (EdgePrune, T_EDGE_PRUNE),
    (SampleEvent, T_SAMPLE),
    (ViewAdd, T_VIEW_ADD),
    (ReportEvent, T_REPORT),
]


def event_type_tag(event: Event) -> int:
    for cls, tag in _EVENT_TYPES:
        if isinstance(event, cls):
            return tag
    raise TypeError(f"not a log event: {type(event).__name__}")


def decode_event(etype: int, payload: bytes) -> Event:
    return _DECODERS[etype](payload)


# ── entry and group framing ─────────────────────────────────────────────

def encode_entry(etype: int, payload: bytes) -> bytes:
    header = _ENTRY_HDR.pack(etype, len(payload))
    return header + payload + _CRC.pack(crc32c(payload, crc32c(header)))


def encode_group(group_seq: int, events: list[Event]) -> tuple[bytes, list[int]]:
    """Serialize one commit group.

    Returns (bytes, entry offsets relative to the group start). The COMMIT
    trailer checksums the concatenated entry bytes, so a group is either
    fully readable or detectably incomplete.
    """
    parts = []
    offsets = []
    pos = 0
    for event in events:
        etype = event_type_tag(event)
        entry = encode_entry(etype, _ENCODERS[etype](event))
        offsets.append(pos)
        parts.append(entry)
        pos += len(entry)
    body = b"".join(parts)
    commit = encode_entry(T_COMMIT, _COMMIT.pack(group_seq, len(events), crc32c(body)))
    return body + commit, offsets


def segment_header(segment_id: int) -> bytes:
    return MAGIC + struct.pack("<II", FORMAT_VERSION, segment_id)


def parse_segment_header(buf: bytes) -> int:
    if len(buf) < HEADER_LEN or buf[:8] != MAGIC:
        raise CorruptInterior("bad segment header")
    version, segment_id = struct.unpack("<II", buf[8:16])
    if version != FORMAT_VERSION:
        raise CorruptInterior(f"unsupported segment format version {version}")
    return segment_id


@dataclass(frozen=True)
class Group:
    group_seq: int
    entries: list[tuple[int, bytes, int]]  # (type, payload, absolute offset)
    end_offset: int  # absolute offset one past the COMMIT entry


class TornTail(Exception):
    """Internal signal: clean data ends here, the rest is a torn write."""

    def __init__(self, committed_end: int):
        self.committed_end = committed_end


def iter_groups(buf: bytes, base: int = HEADER_LEN) -> Iterator[Group]:
    """Yield committed groups from a segment body; raise TornTail at a tear.

    TornTail carries the absolute offset of the last committed byte, for
    truncation. Fully-present corruption raises CorruptInterior.
    """
    pos = base
    end = len(buf)
    committed_end = base
    pending: list[tuple[int, bytes, int]] = []
    pending_start = pos
    while pos < end:
        if pos + 5 > end:
            raise TornTail(committed_end)
        etype, plen = _ENTRY_HDR.unpack_from(buf, pos)
        if etype not in _KNOWN_TYPES:
            raise CorruptInterior(f"unknown entry type 0x{etype:02x} at offset {pos}")
        if plen > MAX_PAYLOAD:
            raise CorruptInterior(f"entry length {plen} exceeds cap at offset {pos}")
        entry_end = pos + 5 + plen + 4
        if entry_end > end:
            raise TornTail(committed_end)
        payload = buf[pos + 5 : pos + 5 + plen]
        want = crc32c(payload, crc32c(buf[pos : pos + 5]))
        (got,) = _CRC.unpack_from(buf, pos + 5 + plen)
        if got != want:
            raise CorruptInterior(f"entry checksum mismatch at offset {pos}")
        if etype == T_COMMIT:
            if plen != _COMMIT.size:
                raise CorruptInterior(f"malformed commit entry at offset {pos}")
            group_seq, count, group_crc = _COMMIT.unpack(payload)
            body = buf[pending_start:pos]
            if count != len(pending) or group_crc != crc32c(body):
                raise CorruptInterior(f"commit group mismatch at offset {pos}")
            yield Group(group_seq, pending, entry_end)
            pending = []
            committed_end = entry_end
            pending_start = entry_end
        else:
            pending.append((etype, payload, pos))
        pos = entry_end
    if pending:
        raise TornTail(committed_end)


def read_groups(buf: bytes, final_segment: bool) -> tuple[list[Group], int]:
    """All committed groups plus the committed end offset.

    In the final segment a torn tail is tolerated (and reported via the
    returned offset, which will be short of len(buf)); anywhere else it is
    interior corruption.
    """
    groups: list[Group] = []
    committed_end = HEADER_LEN
    try:
        for group in iter_groups(buf):
            groups.append(group)
            committed_end = group.end_offset
    except TornTail as tear:
        if not final_segment:
            raise CorruptInterior("sealed segment ends mid-group") from None
        return groups, tear.committed_end
    return groups, committed_end
