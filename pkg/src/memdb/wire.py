"""Wire payload conversion: engine objects <-> JSON-safe dicts.

One request per line, one response per line. Requests carry
{op, request_id, namespace, payload}; responses echo the request_id with
status ok|error. Unknown fields are ignored for forward compatibility.
Vectors travel as number arrays, timestamps as integer microseconds.
"""

from __future__ import annotations

from typing import Any, Mapping, Optional

import numpy as np

from memdb.coherence import CoherenceConfig, CoherenceSample
from memdb.engine import Draft
from memdb.errors import BadRequest
from memdb.model import Edge, MemoryRecord, Weight
from memdb.query import Expansion, Fusion, QuerySpec, RankedHit, RankingConfig


def record_to_json(record: MemoryRecord, include_views: bool = False) -> dict:
    out = {
        "id_time": record.id_time,
        "kind": record.kind,
        "content": record.content,
        "meta": record.meta,
    }
    if include_views:
        out["views"] = {
            name: [float(x) for x in vec]
            for name, vec in record.embeddings.views.items()
        }
    else:
        out["view_dims"] = {
            name: int(vec.shape[0]) for name, vec in record.embeddings.views.items()
        }
    return out


def edge_to_json(edge: Edge) -> dict:
    return {
        "edge_id": edge.edge_id,
        "source": edge.source,
        "destination": edge.destination,
        "relationship": edge.relationship,
        "strength": edge.weight.strength,
        "confidence": edge.weight.confidence,
        "meta": edge.meta,
        "created_at": edge.created_at,
    }


def hit_to_json(hit: RankedHit) -> dict:
    return {
        "id_time": hit.id_time,
        "score": hit.score,
        "sim": hit.sim,
        "temporal_decay": hit.temporal_decay,
        "phi": hit.phi,
        "provenance": {
            "kind": hit.provenance.kind,
            "edge_id": hit.provenance.edge_id,
            "hop": hit.provenance.hop,
        },
    }


def sample_to_json(sample: CoherenceSample) -> dict:
    return {
        "window": [sample.window_lo, sample.window_hi],
        "edge_count": sample.edge_count,
        "c_local": sample.c_local,
        "computed_at": sample.computed_at,
    }


def _require(payload: Mapping[str, Any], key: str) -> Any:
    if key not in payload:
        raise BadRequest(f"payload missing required field {key!r}")
    return payload[key]


def draft_from_json(payload: Mapping[str, Any], embedder=None) -> Draft:
    kind = _require(payload, "kind")
    views = payload.get("views")
    text = payload.get("text")
    if views is None and text is not None:
        if embedder is None:
            raise BadRequest("text embedding requested but no embedder configured")
        views = {"high": embedder.embed(text)}
    elif views is not None:
        views = {name: np.asarray(vec, dtype=np.float32) for name, vec in views.items()}
    content = payload.get("content")
    if content is None and text is not None:
        content = text
    return Draft(kind=kind, content=content, views=views, meta=payload.get("meta"))


def weight_from_json(payload: Mapping[str, Any]) -> Weight:
    return Weight(
        strength=float(payload.get("strength", 1.0)),
        confidence=float(payload.get("confidence", 1.0)),
    )


def coherence_cfg_from_json(payload: Mapping[str, Any]) -> CoherenceConfig:
    return CoherenceConfig(
        lambda_t=float(payload.get("lambda_t", 0.0)),
        lambda_s=float(payload.get("lambda_s", 1.0)),
        mode=payload.get("mode", "practical"),
    )


def window_from_json(payload: Mapping[str, Any]) -> tuple[int, int]:
    window = _require(payload, "window")
    if not (isinstance(window, (list, tuple)) and len(window) == 2):
        raise BadRequest("window must be [t_min, t_max]")
    return int(window[0]), int(window[1])


def spec_from_json(payload: Mapping[str, Any]) -> QuerySpec:
    window = window_from_json(payload)
    ranking_json = payload.get("ranking") or {}
    ranking = RankingConfig(
        alpha=float(ranking_json.get("alpha", 0.55)),
        beta=float(ranking_json.get("beta", 0.35)),
        gamma=float(ranking_json.get("gamma", 0.10)),
        rank_tau=(
            int(ranking_json["rank_tau"]) if ranking_json.get("rank_tau") is not None else None
        ),
        phi_relation_boost=ranking_json.get("phi_relation_boost") or {},
    )
    fusion_json = payload.get("fusion") or {}
    fusion = Fusion(
        kind=fusion_json.get("kind", "identity"),
        weights=fusion_json.get("weights"),
        k_rrf=int(fusion_json.get("k_rrf", 60)),
    )
    expansion = None
    expansion_json = payload.get("expansion")
    if expansion_json:
        expansion = Expansion(
            threshold=float(_require(expansion_json, "threshold")),
            max_hops=int(expansion_json.get("max_hops", 1)),
            coherence=coherence_cfg_from_json(expansion_json.get("coherence") or {}),
        )
    vector = payload.get("vector")
    relationships = payload.get("relationships")
    return QuerySpec(
        window=window,
        k=int(payload.get("k", 10)),
        query_vector=None if vector is None else np.asarray(vector, dtype=np.float32),
        query_text=payload.get("text"),
        kind_filter=payload.get("kind"),
        meta_equals=payload.get("meta_equals"),
        meta_exists=payload.get("meta_exists"),
        relationships=None if relationships is None else set(relationships),
        expansion=expansion,
        ranking=ranking,
        fusion=fusion,
        exact=bool(payload.get("exact", True)),
        k_coarse=(
            int(payload["k_coarse"]) if payload.get("k_coarse") is not None else None
        ),
    )


def error_response(request_id: Optional[str], code: str, message: str) -> dict:
    return {
        "request_id": request_id,
        "status": "error",
        "error": {"code": code, "message": message},
    }


def ok_response(request_id: Optional[str], payload: Any) -> dict:
    return {"request_id": request_id, "status": "ok", "payload": payload}
