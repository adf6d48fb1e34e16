"""Insert/query micro-benchmarks and the compiled-vs-pure kernel comparison.

Numbers here are smoke checks, not gates: the targets mirror the
acceptance thresholds and the reference column carries the illustrative
estimates for the pgvector-based prototype this engine replaces.
"""

from __future__ import annotations

import statistics
import tempfile
import time
from typing import Optional

import numpy as np

from memdb._kernels import _pure

try:
    from memdb._kernels import _native
except ImportError:
    _native = None

from memdb.engine import Database, Draft
from memdb.query import QuerySpec, RankingConfig
from memdb import query as query_mod

REFERENCE = {
    "single_insert_ms": 2.1,  # illustrative estimate, original prototype
    "batch_throughput_rps": 9000,
    "note": "reference figures are illustrative estimates for the pgvector prototype, not formal benchmarks",
}

TARGETS = {"single_insert_p50_ms": 10.0, "batch_throughput_rps": 2000.0}

SINGLE_SAMPLES = 200
QUERY_SAMPLES = 20


def _random_units(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim)).astype(np.float32)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x


def run(
    records: int = 100_000,
    dim: int = 768,
    batch_size: int = 100,
    data_dir: Optional[str] = None,
    seed: int = 7,
) -> dict:
    rng = np.random.default_rng(seed)
    tmp = None
    if data_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="memdb-bench-")
        data_dir = tmp.name
    report: dict = {
        "records": records,
        "dim": dim,
        "batch_size": batch_size,
        "reference": REFERENCE,
        "targets": TARGETS,
    }
    try:
        with Database(data_dir) as db:
            ns = db.namespace("bench")

            # single-insert latency
            singles = _random_units(rng, SINGLE_SAMPLES, dim)
            latencies = []
            for i in range(SINGLE_SAMPLES):
                draft = Draft(kind="message", content=f"single {i}", views={"high": singles[i]})
                t0 = time.perf_counter()
                ns.append(draft)
                latencies.append((time.perf_counter() - t0) * 1000)
            report["single_insert_p50_ms"] = statistics.median(latencies)
            report["single_insert_p95_ms"] = sorted(latencies)[int(0.95 * len(latencies))]

            # batch throughput up to the requested record count
            remaining = max(records - SINGLE_SAMPLES, 0)
            inserted = 0
            t0 = time.perf_counter()
            while inserted < remaining:
                n = min(batch_size, remaining - inserted)
                block = _random_units(rng, n, dim)
                drafts = [
                    Draft(kind="message", content=None, views={"high": block[i]})
                    for i in range(n)
                ]
                ns.append_batch(drafts)
                inserted += n
            elapsed = time.perf_counter() - t0
            report["batch_records"] = inserted
            report["batch_seconds"] = elapsed
            report["batch_throughput_rps"] = inserted / elapsed if elapsed > 0 else float("inf")

            # windowed hybrid query latency
            lo, hi = ns.times[0], ns.times[-1]
            q_latencies = []
            for i in range(QUERY_SAMPLES):
                q = _random_units(rng, 1, dim)[0]
                spec = QuerySpec(
                    window=(lo, hi), k=10, query_vector=q,
                    ranking=RankingConfig(1.0, 0.0, 0.0, rank_tau=1),
                )
                t0 = time.perf_counter()
                query_mod.execute(ns, spec)
                q_latencies.append((time.perf_counter() - t0) * 1000)
            report["query_p50_ms"] = statistics.median(q_latencies)
    finally:
        if tmp is not None:
            tmp.cleanup()

    report["kernels"] = kernel_comparison()
    return report


def kernel_comparison(payload_mib: int = 8, topk_n: int = 200_000) -> dict:
    """Throughput of the compiled kernels against their pure twins."""
    rng = np.random.default_rng(11)
    blob = rng.integers(0, 256, size=payload_mib * 1024 * 1024, dtype=np.uint8).tobytes()
    small = blob[: 256 * 1024]  # the pure path is ~100x slower; keep it honest but bounded
    out: dict = {"native_available": _native is not None}

    t0 = time.perf_counter()
    _pure.crc32c(small)
    pure_s = time.perf_counter() - t0
    out["crc32c_pure_mib_s"] = (len(small) / (1024 * 1024)) / pure_s
    if _native is not None:
        t0 = time.perf_counter()
        _native.crc32c(blob)
        native_s = time.perf_counter() - t0
        out["crc32c_native_mib_s"] = (len(blob) / (1024 * 1024)) / native_s

    scores = rng.standard_normal(topk_n)
    keys = np.arange(topk_n, dtype=np.int64)
    t0 = time.perf_counter()
    a = _pure.topk(scores, keys, 10)
    out["topk_pure_ms"] = (time.perf_counter() - t0) * 1000
    if _native is not None:
        t0 = time.perf_counter()
        b = _native.topk(scores, keys, 10)
        out["topk_native_ms"] = (time.perf_counter() - t0) * 1000
        out["topk_agree"] = bool(np.array_equal(a, b))
    return out


def print_report(report: dict) -> None:
    ref = report["reference"]
    targets = report["targets"]
    print(f"memdb bench — {report['records']} records, dim {report['dim']}, "
          f"batch {report['batch_size']}")
    print()
    print(f"{'operation':<28} {'measured':>12} {'target':>10} {'reference':>10}")
    print("-" * 64)
    print(f"{'single insert p50 (ms)':<28} {report['single_insert_p50_ms']:>12.3f} "
          f"{targets['single_insert_p50_ms']:>10.1f} {ref['single_insert_ms']:>10.1f}")
    print(f"{'single insert p95 (ms)':<28} {report['single_insert_p95_ms']:>12.3f} "
          f"{'—':>10} {'—':>10}")
    print(f"{'batch throughput (recs/s)':<28} {report['batch_throughput_rps']:>12.0f} "
          f"{targets['batch_throughput_rps']:>10.0f} {ref['batch_throughput_rps']:>10.0f}")
    print(f"{'query p50 (ms, k=10)':<28} {report['query_p50_ms']:>12.3f} {'—':>10} {'—':>10}")
    print()
    k = report["kernels"]
    print("kernels (compiled extension vs pure fallback):")
    if k["native_available"]:
        print(f"  crc32c: native {k['crc32c_native_mib_s']:>10.1f} MiB/s   "
              f"pure {k['crc32c_pure_mib_s']:>8.1f} MiB/s")
        print(f"  topk:   native {k['topk_native_ms']:>10.3f} ms      "
              f"pure {k['topk_pure_ms']:>8.3f} ms   agree={k['topk_agree']}")
    else:
        print(f"  extension not built; pure crc32c {k['crc32c_pure_mib_s']:.1f} MiB/s, "
              f"pure topk {k['topk_pure_ms']:.3f} ms")
    print()
    print(f"note: {ref['note']}")
