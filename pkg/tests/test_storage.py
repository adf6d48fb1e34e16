"""Append-only log: durability, atomicity, recovery, scan correctness."""

import numpy as np
import pytest

from memdb import logfmt
from memdb.engine import Database, Draft
from memdb.errors import (
    CorruptInterior,
    DataDirLocked,
    EmptyBatch,
    InvalidWindow,
    NotFound,
)
from tests.conftest import random_units, unit


def _draft(vec, kind="message", content=None, meta=None):
    return Draft(kind=kind, content=content, views={"high": vec}, meta=meta)


class TestAppend:
    def test_append_then_get(self, ns):
        rec = ns.append(_draft(unit(1, 0), content="one"))
        got = ns.get(rec.id_time)
        assert got.content == "one"
        assert got.kind == "message"

    def test_batch_scan_matches_sorted_reference(self, ns):
        rng = np.random.default_rng(1)
        vecs = random_units(rng, 100, 8)
        records = ns.append_batch([_draft(vecs[i], content=str(i)) for i in range(100)])
        reference = sorted(r.id_time for r in records)
        scanned = ns.scan_window(reference[0], reference[-1])
        assert [r.id_time for r in scanned] == reference
        assert len(scanned) == 100

    def test_duplicate_wall_clock_bumps(self, ns):
        a = ns.append(_draft(unit(1, 0)), wall_clock=5000)
        b = ns.append(_draft(unit(0, 1)), wall_clock=5000)
        assert a.id_time == 5000
        assert b.id_time == 5001

    def test_batch_timestamps_strictly_ascending(self, ns):
        records = ns.append_batch([_draft(unit(1, 0)) for _ in range(3)], wall_clock=77)
        times = [r.id_time for r in records]
        assert times == sorted(set(times)) == [77, 78, 79]

    def test_empty_batch(self, ns):
        with pytest.raises(EmptyBatch):
            ns.append_batch([])

    def test_failed_validation_rolls_back_mint(self, ns):
        before = ns.last_minted
        with pytest.raises(Exception):
            ns.append(Draft(kind="", views={"high": unit(1, 0)}))
        assert ns.last_minted == before


class TestUpdateMeta:
    def test_patch_inserts(self, ns):
        rec = ns.append(_draft(unit(1, 0)))
        out = ns.update_meta(rec.id_time, {"importance": 0.9})
        assert out == {"importance": 0.9}

    def test_last_writer_wins(self, ns):
        rec = ns.append(_draft(unit(1, 0)))
        ns.update_meta(rec.id_time, {"k": 1})
        out = ns.update_meta(rec.id_time, {"k": 2})
        assert out["k"] == 2

    def test_missing_record(self, ns):
        with pytest.raises(NotFound):
            ns.update_meta(424242, {"k": 1})

    def test_immutable_fields_unchanged(self, ns):
        rec = ns.append(_draft(unit(1, 0), content="keep"))
        ns.update_meta(rec.id_time, {"k": 1})
        got = ns.get(rec.id_time)
        assert got.content == "keep" and got.kind == "message"
        assert got.id_time == rec.id_time


class TestScanWindow:
    def test_empty_window(self, ns):
        ns.append(_draft(unit(1, 0)), wall_clock=100)
        assert ns.scan_window(200, 300) == []

    def test_inclusive_bounds_match_brute_force(self, ns):
        records = [ns.append(_draft(unit(1, 0)), wall_clock=t) for t in (10, 20, 30, 40, 50)]
        times = [r.id_time for r in records]
        got = [r.id_time for r in ns.scan_window(times[1], times[3])]
        brute = [t for t in times if times[1] <= t <= times[3]]
        assert got == brute == times[1:4]

    def test_kind_filter_matches_brute_force(self, ns):
        rng = np.random.default_rng(2)
        kinds = ["message", "summary", "state"]
        records = ns.append_batch(
            [_draft(v, kind=kinds[i % 3]) for i, v in enumerate(random_units(rng, 30, 4))]
        )
        got = ns.scan_window(records[0].id_time, records[-1].id_time, "summary")
        brute = [r for r in records if r.kind == "summary"]
        assert [r.id_time for r in got] == [r.id_time for r in brute]

    def test_invalid_window(self, ns):
        with pytest.raises(InvalidWindow):
            ns.scan_window(10, 5)

    def test_random_windows_property(self, ns):
        rng = np.random.default_rng(3)
        records = ns.append_batch([_draft(v) for v in random_units(rng, 200, 4)])
        times = [r.id_time for r in records]
        for _ in range(1000):
            a, b = sorted(rng.integers(times[0] - 5, times[-1] + 5, size=2))
            got = [r.id_time for r in ns.scan_window(int(a), int(b))]
            assert got == [t for t in times if a <= t <= b]


def _build_fixture(root, groups=20, seed=0):
    rng = np.random.default_rng(seed)
    with Database(root) as db:
        ns = db.namespace("crash")
        last_times = []
        for g in range(groups):
            n = int(rng.integers(1, 4))
            records = ns.append_batch(
                [_draft(random_units(rng, 1, 4)[0], content=f"g{g}r{i}") for i in range(n)]
            )
            last_times.extend(r.id_time for r in records)
            if g % 3 == 1 and len(last_times) >= 2:
                ns.add_edge(last_times[-2], last_times[-1], "follows")
            if g % 5 == 2:
                ns.update_meta(last_times[0], {"touch": g})
        digest = ns.state_digest()
        counts = (len(ns.records), len(ns.edges))
    return digest, counts


class TestRecovery:
    def test_clean_shutdown_identical_state(self, tmp_path):
        digest, _ = _build_fixture(tmp_path / "d")
        with Database(tmp_path / "d") as db:
            assert db.namespace("crash").state_digest() == digest

    def test_replay_deterministic(self, tmp_path):
        _build_fixture(tmp_path / "d")
        with Database(tmp_path / "d") as db:
            first = db.namespace("crash").state_digest()
        with Database(tmp_path / "d") as db:
            second = db.namespace("crash").state_digest()
        assert first == second

    def test_truncation_sweep_never_tears_a_group(self, tmp_path):
        """Cutting the log anywhere exposes a whole-group prefix."""
        _build_fixture(tmp_path / "d", groups=12)
        seg = tmp_path / "d" / "crash" / "seg-000001.log"
        original = seg.read_bytes()
        groups, _ = logfmt.read_groups(original, final_segment=True)
        boundaries = [logfmt.HEADER_LEN] + [g.end_offset for g in groups]
        group_records = []
        for g in groups:
            group_records.append(
                sum(1 for etype, _, _ in g.entries if etype == logfmt.T_RECORD)
            )
        prefix_counts = np.cumsum([0] + group_records)

        work = tmp_path / "w"
        for cut in range(logfmt.HEADER_LEN, len(original), 7):
            if work.exists():
                import shutil

                shutil.rmtree(work)
            nsdir = work / "crash"
            nsdir.mkdir(parents=True)
            (nsdir / "seg-000001.log").write_bytes(original[:cut])
            with Database(work) as db:
                ns = db.namespace("crash")
                committed = max(b for b in boundaries if b <= cut)
                expected = prefix_counts[boundaries.index(committed)]
                assert len(ns.records) == expected, f"cut at {cut}"

    def test_interior_bit_flip_detected(self, tmp_path):
        _build_fixture(tmp_path / "d", groups=10)
        seg = tmp_path / "d" / "crash" / "seg-000001.log"
        original = seg.read_bytes()
        groups, _ = logfmt.read_groups(original, final_segment=True)
        # flip one bit inside the payload of an entry in each early group
        rng = np.random.default_rng(9)
        for g in groups[:-1][:5]:
            etype, payload, off = g.entries[0]
            corrupt = bytearray(original)
            bit = int(rng.integers(0, len(payload) * 8))
            corrupt[off + 5 + bit // 8] ^= 1 << (bit % 8)
            seg.write_bytes(bytes(corrupt))
            with pytest.raises(CorruptInterior):
                with Database(tmp_path / "d") as db:
                    db.namespace("crash")
            seg.write_bytes(original)

    def test_torn_tail_truncated_then_appendable(self, tmp_path):
        _build_fixture(tmp_path / "d", groups=6)
        seg = tmp_path / "d" / "crash" / "seg-000001.log"
        original = seg.read_bytes()
        seg.write_bytes(original[:-3])  # tear inside the final COMMIT
        with Database(tmp_path / "d") as db:
            ns = db.namespace("crash")
            before = len(ns.records)
            ns.append(_draft(unit(1, 0, 0, 0)))
            assert len(ns.records) == before + 1
        with Database(tmp_path / "d") as db:
            assert len(db.namespace("crash").records) == before + 1


class TestSegments:
    def test_roll_and_seal_produces_sidecar(self, tmp_path):
        from memdb.storage import SegmentPolicy

        with Database(tmp_path / "d", segment_policy=SegmentPolicy(max_bytes=2048)) as db:
            ns = db.namespace("roll")
            rng = np.random.default_rng(4)
            for v in random_units(rng, 40, 8):
                ns.append(_draft(v))
            assert len(ns.store.segments) > 1
            sealed = [s for s in ns.store.segments.values() if s.sealed]
            assert sealed
            for info in sealed:
                pairs = ns.store.read_index_sidecar(info.segment_id)
                assert pairs, "sealed segment must carry a sparse index"
                for ts, off in pairs:
                    assert info.min_time <= ts <= info.max_time
            digest = ns.state_digest()
        with Database(tmp_path / "d") as db:
            assert db.namespace("roll").state_digest() == digest

    def test_data_dir_lock(self, tmp_path):
        with Database(tmp_path / "d"):
            with pytest.raises(DataDirLocked):
                Database(tmp_path / "d")
