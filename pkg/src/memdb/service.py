"""Line-delimited JSON service over TCP.

Each connection is handled by one thread; the engine's per-namespace
writer lock serializes mutations, so any number of clients can talk to
the same store. A malformed line yields a BadRequest response and the
connection stays open. Graceful shutdown closes the listener, stops the
maintenance scheduler, and releases the data directory.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from memdb import maintenance, query, wire
from memdb.embed import Embedder, make_embedder
from memdb.engine import Database
from memdb.errors import AddressInUse, BadRequest, MemdbError
from memdb.maintenance import MaintenancePlan

logger = logging.getLogger("memdb.service")

DEFAULT_PORT = 7744
ENV_DATA_DIR = "MEMDB_DATA_DIR"


@dataclass
class ServiceConfig:
    data_dir: str = "./memdb-data"
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    embedder_name: str = "det-hash"
    embedder_dim: int = 768
    namespace_embedders: dict = field(default_factory=dict)  # name -> {name, dim}
    maintenance_enabled: bool = False
    maintenance: dict = field(default_factory=dict)  # MaintenancePlan overrides

    @staticmethod
    def load(path: Optional[str] = None, **overrides) -> "ServiceConfig":
        """Config file < env var < explicit flags, later wins."""
        data: dict[str, Any] = {}
        if path:
            data.update(json.loads(Path(path).read_text()))
        cfg = ServiceConfig(**{k: v for k, v in data.items() if k in ServiceConfig.__dataclass_fields__})
        env_dir = os.environ.get(ENV_DATA_DIR)
        if env_dir:
            cfg.data_dir = env_dir
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
        return cfg

    def plan(self) -> MaintenancePlan:
        fields = {
            k: v
            for k, v in self.maintenance.items()
            if k in MaintenancePlan.__dataclass_fields__
        }
        if "tasks" in fields:
            fields["tasks"] = tuple(fields["tasks"])
        return MaintenancePlan(**fields)


class Service:
    """Engine + embedder registry + request dispatch + scheduler."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.db = Database(config.data_dir)
        self._default_embedder = make_embedder(config.embedder_name, config.embedder_dim)
        self._embedders: dict[str, Embedder] = {}
        for ns_name, spec in config.namespace_embedders.items():
            self._embedders[ns_name] = make_embedder(
                spec.get("name", config.embedder_name),
                int(spec.get("dim", config.embedder_dim)),
            )
        self._stop = threading.Event()
        self._scheduler: Optional[threading.Thread] = None

    def embedder_for(self, namespace: str) -> Embedder:
        return self._embedders.get(namespace, self._default_embedder)

    # ── dispatch ────────────────────────────────────────────────────

    def handle_line(self, line: str) -> dict:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            return wire.error_response(None, "BadRequest", f"malformed JSON: {exc}")
        if not isinstance(req, dict):
            return wire.error_response(None, "BadRequest", "request must be an object")
        request_id = req.get("request_id")
        if not isinstance(request_id, (str, type(None))):
            request_id = str(request_id)
        try:
            op = req.get("op")
            if not isinstance(op, str):
                raise BadRequest("missing op")
            payload = req.get("payload") or {}
            if not isinstance(payload, dict):
                raise BadRequest("payload must be an object")
            result = self.dispatch(op, req.get("namespace"), payload)
            return wire.ok_response(request_id, result)
        except MemdbError as exc:
            return wire.error_response(request_id, exc.code, str(exc))
        except Exception as exc:  # never let a request kill the connection
            logger.exception("internal error handling %s", req.get("op"))
            return wire.error_response(request_id, "Internal", f"{type(exc).__name__}: {exc}")

    def _namespace(self, name: Optional[str]):
        if not isinstance(name, str) or not name:
            raise BadRequest("missing namespace")
        return self.db.namespace(name)

    def dispatch(self, op: str, namespace: Optional[str], payload: dict) -> Any:
        if op == "ping":
            return {"pong": True}
        if op == "stats":
            if namespace:
                return self._namespace(namespace).stats()
            return self.db.stats()

        ns = self._namespace(namespace)
        embedder = self.embedder_for(namespace)

        if op == "append":
            record = ns.append(wire.draft_from_json(payload, embedder))
            return {"id_time": record.id_time}
        if op == "batch":
            records_json = payload.get("records")
            if not isinstance(records_json, list):
                raise BadRequest("batch payload needs a records array")
            drafts = [wire.draft_from_json(r, embedder) for r in records_json]
            records = ns.append_batch(drafts)
            return {"id_times": [r.id_time for r in records]}
        if op == "edge":
            edge = ns.add_edge(
                source=int(wire._require(payload, "source")),
                destination=int(wire._require(payload, "destination")),
                relationship=wire._require(payload, "relationship"),
                weight=wire.weight_from_json(payload),
                meta=payload.get("meta"),
            )
            return wire.edge_to_json(edge)
        if op == "update_meta":
            meta = ns.update_meta(
                int(wire._require(payload, "id_time")),
                wire._require(payload, "patch"),
            )
            return {"meta": meta}
        if op == "get":
            record = ns.get(int(wire._require(payload, "id_time")))
            return wire.record_to_json(record, include_views=bool(payload.get("include_views")))
        if op == "scan":
            t_min, t_max = wire.window_from_json(payload)
            records = ns.scan_window(t_min, t_max, payload.get("kind"))
            limit = payload.get("limit")
            if limit is not None:
                records = records[: int(limit)]
            return {
                "records": [
                    wire.record_to_json(r, include_views=bool(payload.get("include_views")))
                    for r in records
                ]
            }
        if op == "query":
            spec = wire.spec_from_json(payload)
            hits = query.execute(ns, spec, embedder)
            return {"hits": [wire.hit_to_json(h) for h in hits]}
        if op == "coherence":
            window = wire.window_from_json(payload)
            cfg = wire.coherence_cfg_from_json(payload)
            sample = ns.local_coherence(window, cfg, persist=bool(payload.get("persist")))
            return wire.sample_to_json(sample)
        if op == "edges_out":
            edges = ns.edges_out(
                int(wire._require(payload, "source")),
                payload.get("relationship"),
                payload.get("as_of"),
            )
            return {"edges": [wire.edge_to_json(e) for e in edges]}
        if op == "compact":
            reclaimed = maintenance.compact(ns, int(wire._require(payload, "segment_id")))
            return {"bytes_reclaimed": reclaimed}
        if op == "maintenance":
            report = maintenance.run_cycle(ns, self.config.plan())
            return report.as_dict()
        raise BadRequest(f"unknown op {op!r}")

    # ── scheduler ───────────────────────────────────────────────────

    def _scheduler_loop(self) -> None:
        plan = self.config.plan()
        while not self._stop.wait(plan.interval_s):
            for name in self.db.list_namespaces():
                if self._stop.is_set():
                    break
                try:
                    maintenance.run_cycle(self.db.namespace(name), plan)
                except Exception:
                    logger.exception("maintenance cycle failed for %s", name)

    def start_scheduler(self) -> None:
        if self.config.maintenance_enabled and self._scheduler is None:
            self._scheduler = threading.Thread(
                target=self._scheduler_loop, name="memdb-maintenance", daemon=True
            )
            self._scheduler.start()

    def close(self) -> None:
        self._stop.set()
        if self._scheduler is not None:
            self._scheduler.join(timeout=5)
            self._scheduler = None
        self.db.close()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: Service = self.server.service  # type: ignore[attr-defined]
        while True:
            try:
                raw = self.rfile.readline()
            except (ConnectionResetError, OSError):
                break
            if not raw:
                break
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            response = service.handle_line(line)
            try:
                self.wfile.write(json.dumps(response, ensure_ascii=False).encode("utf-8") + b"\n")
                self.wfile.flush()
            except (BrokenPipeError, OSError):
                break


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ServerHandle:
    """A bound listener plus its engine; run() blocks, shutdown() stops it."""

    def __init__(self, config: ServiceConfig):
        self.service = Service(config)
        try:
            self.server = _Server((config.host, config.port), _Handler)
        except OSError as exc:
            self.service.close()
            if exc.errno == 98:  # EADDRINUSE
                raise AddressInUse(f"{config.host}:{config.port} is already bound") from exc
            raise
        self.server.service = self.service  # type: ignore[attr-defined]
        self.address = self.server.server_address[:2]
        self.service.start_scheduler()

    def run(self) -> None:
        try:
            self.server.serve_forever(poll_interval=0.2)
        finally:
            self.server.server_close()
            self.service.close()

    def run_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.run, name="memdb-server", daemon=True)
        thread.start()
        return thread

    def shutdown(self) -> None:
        self.server.shutdown()


def serve(config: ServiceConfig, install_signal_handlers: bool = True) -> None:
    """Run the service until SIGINT/SIGTERM (or handle.shutdown())."""
    handle = ServerHandle(config)

    if install_signal_handlers:
        def _shutdown(signum, frame):
            threading.Thread(target=handle.shutdown, daemon=True).start()

        signal.signal(signal.SIGINT, _shutdown)
        signal.signal(signal.SIGTERM, _shutdown)

    host, port = handle.address
    logger.info("serving on %s:%d (data dir %s)", host, port, config.data_dir)
    handle.run()
    logger.info("shutdown complete")
