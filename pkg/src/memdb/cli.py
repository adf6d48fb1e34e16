"""Command-line front-end.

Subcommands map 1:1 onto engine operations and operate directly on a data
directory (``serve`` runs the TCP service instead). Operational errors
exit 1 with a message on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional

import numpy as np

from memdb import bench, maintenance, query, wire
from memdb.embed import make_embedder
from memdb.engine import Database, Draft
from memdb.errors import MemdbError
from memdb.service import ENV_DATA_DIR, ServiceConfig, serve


def _add_data_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", default=None, help=f"data directory (or ${ENV_DATA_DIR})")
    p.add_argument("--namespace", "-n", default="default", help="namespace (timeline)")


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.split(",")], dtype=np.float32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memdb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the TCP service")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--maintenance", action="store_true", help="enable the background scheduler")

    p = sub.add_parser("append", help="append one record")
    _add_data_dir(p)
    p.add_argument("--kind", required=True)
    p.add_argument("--content", default=None)
    p.add_argument("--text", default=None, help="embed this text as the high view")
    p.add_argument("--vector", default=None, help="comma-separated high view")
    p.add_argument("--meta", default=None, help="JSON object")
    p.add_argument("--dim", type=int, default=768, help="embedder dimension for --text")

    p = sub.add_parser("batch", help="append records from a JSONL file")
    _add_data_dir(p)
    p.add_argument("--file", required=True, help="one record object per line")
    p.add_argument("--dim", type=int, default=768)

    p = sub.add_parser("edge", help="add one directed edge")
    _add_data_dir(p)
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--dest", type=int, required=True)
    p.add_argument("--rel", required=True)
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--confidence", type=float, default=1.0)
    p.add_argument("--meta", default=None)

    p = sub.add_parser("query", help="hybrid query")
    _add_data_dir(p)
    p.add_argument("--from", dest="t_min", type=int, required=True)
    p.add_argument("--to", dest="t_max", type=int, required=True)
    p.add_argument("--text", default=None)
    p.add_argument("--vector", default=None)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--kind", default=None)
    p.add_argument("--alpha", type=float, default=0.55)
    p.add_argument("--beta", type=float, default=0.35)
    p.add_argument("--gamma", type=float, default=0.10)
    p.add_argument("--rank-tau", type=int, default=None)
    p.add_argument("--expand-threshold", type=float, default=None)
    p.add_argument("--max-hops", type=int, default=1)
    p.add_argument("--coarse", action="store_true", help="low-view filtering instead of exact")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("coherence", help="windowed local coherence")
    _add_data_dir(p)
    p.add_argument("--from", dest="t_min", type=int, required=True)
    p.add_argument("--to", dest="t_max", type=int, required=True)
    p.add_argument("--persist", action="store_true", help="log the sample")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("stats", help="store statistics")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--namespace", "-n", default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("compact", help="compact one sealed segment")
    _add_data_dir(p)
    p.add_argument("--segment", type=int, required=True)

    p = sub.add_parser("bench", help="insert/query micro-benchmarks + kernel comparison")
    p.add_argument("--records", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--data-dir", default=None, help="default: a temp directory")
    p.add_argument("--json", action="store_true")

    return parser


def _data_dir(args) -> str:
    import os

    path = args.data_dir or os.environ.get(ENV_DATA_DIR)
    if not path:
        raise MemdbError(f"no data directory: pass --data-dir or set {ENV_DATA_DIR}")
    return path


def _meta(args) -> Optional[dict]:
    return json.loads(args.meta) if args.meta else None


def _print(obj, as_json: bool) -> None:
    if as_json:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(json.dumps(obj, sort_keys=True))


def _cmd_append(args) -> int:
    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        views = None
        if args.vector:
            views = {"high": _parse_vector(args.vector)}
        elif args.text is not None:
            views = {"high": make_embedder("det-hash", args.dim).embed(args.text)}
        draft = Draft(
            kind=args.kind,
            content=args.content if args.content is not None else args.text,
            views=views,
            meta=_meta(args),
        )
        record = ns.append(draft)
        print(record.id_time)
    return 0


def _cmd_batch(args) -> int:
    embedder = make_embedder("det-hash", args.dim)
    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        drafts = []
        with open(args.file, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    drafts.append(wire.draft_from_json(json.loads(line), embedder))
        records = ns.append_batch(drafts)
        for record in records:
            print(record.id_time)
    return 0


def _cmd_edge(args) -> int:
    from memdb.model import Weight

    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        edge = ns.add_edge(
            args.source, args.dest, args.rel,
            Weight(args.strength, args.confidence), _meta(args),
        )
        print(edge.edge_id)
    return 0


def _cmd_query(args) -> int:
    from memdb.query import Expansion, QuerySpec, RankingConfig

    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        embedder = make_embedder("det-hash", args.dim)
        spec = QuerySpec(
            window=(args.t_min, args.t_max),
            k=args.k,
            query_vector=_parse_vector(args.vector) if args.vector else None,
            query_text=args.text,
            kind_filter=args.kind,
            expansion=(
                Expansion(args.expand_threshold, args.max_hops)
                if args.expand_threshold is not None
                else None
            ),
            ranking=RankingConfig(args.alpha, args.beta, args.gamma, args.rank_tau),
            exact=not args.coarse,
        )
        hits = query.execute(ns, spec, embedder)
        if args.json:
            _print([wire.hit_to_json(h) for h in hits], True)
        else:
            for h in hits:
                print(
                    f"{h.id_time}  score={h.score:.6f}  sim={h.sim:.6f}  "
                    f"decay={h.temporal_decay:.6f}  phi={h.phi:.4f}  {h.provenance.kind}"
                )
    return 0


def _cmd_coherence(args) -> int:
    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        sample = ns.local_coherence((args.t_min, args.t_max), persist=args.persist)
        _print(wire.sample_to_json(sample), args.json)
    return 0


def _cmd_stats(args) -> int:
    with Database(_data_dir(args)) as db:
        stats = db.namespace(args.namespace).stats() if args.namespace else db.stats()
        _print(stats, args.json)
    return 0


def _cmd_compact(args) -> int:
    with Database(_data_dir(args)) as db:
        ns = db.namespace(args.namespace)
        print(maintenance.compact(ns, args.segment))
    return 0


def _cmd_serve(args) -> int:
    config = ServiceConfig.load(
        args.config,
        data_dir=args.data_dir,
        host=args.host,
        port=args.port,
        maintenance_enabled=True if args.maintenance else None,
    )
    serve(config)
    return 0


def _cmd_bench(args) -> int:
    report = bench.run(
        records=args.records,
        dim=args.dim,
        batch_size=args.batch_size,
        data_dir=args.data_dir,
    )
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        bench.print_report(report)
    return 0


_COMMANDS = {
    "serve": _cmd_serve,
    "append": _cmd_append,
    "batch": _cmd_batch,
    "edge": _cmd_edge,
    "query": _cmd_query,
    "coherence": _cmd_coherence,
    "stats": _cmd_stats,
    "compact": _cmd_compact,
    "bench": _cmd_bench,
}


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MemdbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
