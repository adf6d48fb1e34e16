"""Regenerate the golden wire-protocol corpus (protocol/golden.jsonl).

Each line is one wire message (request or response) in canonical JSON:
sorted keys, minimal separators, UTF-8. Both the Python suite and the
client SDK assert that parsing a line and re-serializing it canonically
reproduces the bytes exactly, which locks the protocol across languages.

Floats that equal an integer are rejected here: JavaScript has a single
number type, so JSON.stringify(1.0) yields "1" and the round-trip breaks.
The scripted session below is arranged so no such value appears (every
hit has an outgoing edge, no zero vector components, and so on).
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from memdb.logfmt import canonical_json
from memdb.service import Service, ServiceConfig

OUT = Path(__file__).parent / "golden.jsonl"


def canonical(obj) -> str:
    return canonical_json(obj).decode("utf-8")


def reject_integral_floats(obj, path="$"):
    if isinstance(obj, float):
        if obj == int(obj):
            raise SystemExit(f"integral float at {path}: {obj!r} breaks the JS round-trip")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            reject_integral_floats(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            reject_integral_floats(v, f"{path}[{i}]")


def vec(*components):
    arr = np.asarray(components, dtype=np.float64)
    arr = arr / np.linalg.norm(arr)
    return [float(np.float32(x)) for x in arr]


def main() -> int:
    lines = []
    counter = 0
    with tempfile.TemporaryDirectory() as tmp:
        svc = Service(ServiceConfig(data_dir=tmp, embedder_dim=6))

        def call(op, namespace=None, payload=None):
            nonlocal counter
            counter += 1
            req = {
                "op": op,
                "request_id": f"g-{counter:03d}",
                "namespace": namespace,
                "payload": payload or {},
            }
            resp = svc.handle_line(json.dumps(req))
            lines.append(canonical(req))
            lines.append(canonical(resp))
            return resp

        call("ping")
        a = call(
            "append",
            "agent-7",
            {
                "kind": "message",
                "content": "naïve café 日本語",
                "views": {"high": vec(1.5, 2.5, 3.5, 4.5, 5.5, 6.5), "low": vec(1.5, 2.5)},
                "meta": {"topic": "greeting", "importance": 0.75, "tags": ["a", "b"]},
            },
        )["payload"]["id_time"]
        b = call(
            "batch",
            "agent-7",
            {
                "records": [
                    {"kind": "observation", "views": {"high": vec(2.5, 1.5, 6.5, 3.5, 5.5, 4.5)}},
                    {"kind": "summary", "content": "two", "views": {"high": vec(6.5, 5.5, 4.5, 3.5, 2.5, 1.5)}},
                ]
            },
        )["payload"]["id_times"]
        call(
            "edge",
            "agent-7",
            {"source": a, "destination": b[0], "relationship": "reply",
             "strength": 0.5, "confidence": 0.75, "meta": {"by": "corpus"}},
        )
        call(
            "edge",
            "agent-7",
            {"source": b[0], "destination": b[1], "relationship": "summary-of",
             "strength": -0.25, "confidence": 0.875},
        )
        call("update_meta", "agent-7", {"id_time": a, "patch": {"importance": 0.875, "seen": True}})
        call("get", "agent-7", {"id_time": a, "include_views": True})
        call("scan", "agent-7", {"window": [a, b[1]], "kind": "observation"})
        call(
            "query",
            "agent-7",
            {
                "window": [a, b[0] + 5],
                "vector": vec(1.5, 2.5, 3.5, 4.5, 5.5, 6.25),
                "k": 2,
                "ranking": {"alpha": 0.55, "beta": 0.35, "rank_tau": 2500000},
                "fusion": {"kind": "weighted", "weights": {"high": 0.75, "low": 0.25}},
                "expansion": {"threshold": 0.35, "max_hops": 1},
            },
        )
        call("coherence", "agent-7", {"window": [a, b[1] + 10], "persist": True})
        call("edges_out", "agent-7", {"source": a})
        call("stats", "agent-7")
        call("maintenance", "agent-7")
        # representative errors are part of the protocol too
        call("get", "agent-7", {"id_time": 17})
        call("frobnicate", "agent-7")
        lines.append(canonical(svc.handle_line("this is not json")))
        svc.close()

    for i, line in enumerate(lines):
        parsed = json.loads(line)
        reject_integral_floats(parsed, f"line[{i}]")
        if canonical(parsed) != line:
            raise SystemExit(f"line {i} is not canonical")

    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} messages to {OUT}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
