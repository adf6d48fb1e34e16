"""Domain types, validation rules, and timestamp minting.

Records and edges are immutable value objects keyed by microsecond
timestamps; the engine mutates only metadata maps after commit, and only
through logged patches. Minting is monotone per namespace: a wall-clock
collision bumps by one microsecond instead of rejecting the write.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from memdb.errors import (
    DimensionMismatch,
    EmptyKind,
    MissingHighView,
    NotUnitNorm,
    ValidationError,
)

NAMESPACE_RE = re.compile(r"^[a-z0-9_-]{1,128}$")

HIGH_VIEW = "high"
LOW_VIEW = "low"
DEFAULT_HIGH_DIM = 768
DEFAULT_LOW_DIM = 64
MAX_KIND_BYTES = 64
UNIT_NORM_TOL = 1e-6

_SCALARS = (str, int, float, bool, type(None))


def validate_namespace(name: str) -> str:
    if not isinstance(name, str) or not NAMESPACE_RE.match(name):
        raise ValidationError(
            f"namespace must match [a-z0-9_-]{{1,128}}, got {name!r}"
        )
    return name


def validate_kind(kind: str) -> str:
    if not isinstance(kind, str) or not kind:
        raise EmptyKind("kind label must be a nonempty string")
    if len(kind.encode("utf-8")) > MAX_KIND_BYTES:
        raise EmptyKind(f"kind label exceeds {MAX_KIND_BYTES} bytes")
    return kind


def mint_timestamp(wall_clock_micros: int, last_minted: int) -> int:
    """Next unique microsecond timestamp for a namespace.

    Returns max(wall_clock_micros, last_minted + 1): the wall clock when it
    has advanced, otherwise one past the previous mint. Always strictly
    greater than ``last_minted``, so per-namespace timestamps are unique
    and strictly increasing for any insertion sequence.
    """
    if wall_clock_micros <= 0:
        raise ValidationError("wall clock must be positive microseconds")
    return max(wall_clock_micros, last_minted + 1)


def validate_meta(meta: Mapping[str, Any]) -> dict:
    """Check the metadata shape: scalars, flat lists, one level of nesting."""
    if not isinstance(meta, Mapping):
        raise ValidationError("meta must be a mapping")
    for key, value in meta.items():
        if not isinstance(key, str):
            raise ValidationError(f"meta keys must be strings, got {key!r}")
        _validate_meta_value(key, value, nested=False)
    return dict(meta)


def _validate_meta_value(key: str, value: Any, nested: bool) -> None:
    if isinstance(value, _SCALARS):
        return
    if isinstance(value, (list, tuple)):
        for item in value:
            if not isinstance(item, _SCALARS):
                raise ValidationError(f"meta[{key!r}]: lists must hold scalars")
        return
    if isinstance(value, Mapping) and not nested:
        for k, v in value.items():
            if not isinstance(k, str):
                raise ValidationError(f"meta[{key!r}]: nested keys must be strings")
            _validate_meta_value(f"{key}.{k}", v, nested=True)
        return
    raise ValidationError(
        f"meta[{key!r}]: values may be scalars, flat lists, or one nested map"
    )


def as_unit_f32(vec: Any) -> np.ndarray:
    """Coerce to a contiguous float32 vector without normalizing it."""
    arr = np.ascontiguousarray(vec, dtype=np.float32)
    if arr.ndim != 1:
        raise ValidationError("embedding vectors must be one-dimensional")
    return arr


@dataclass(frozen=True)
class EmbeddingSet:
    """Named views of unit vectors for one record ("high" is mandatory)."""

    views: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def build(views: Mapping[str, Any]) -> "EmbeddingSet":
        return EmbeddingSet({name: as_unit_f32(v) for name, v in views.items()})

    def dim(self, name: str) -> Optional[int]:
        v = self.views.get(name)
        return None if v is None else int(v.shape[0])

    @property
    def high(self) -> np.ndarray:
        return self.views[HIGH_VIEW]


@dataclass(frozen=True)
class MemoryRecord:
    """One immutable experience: (id_time, kind, content, views, meta)."""

    id_time: int
    kind: str
    content: Optional[str]
    embeddings: EmbeddingSet
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Weight:
    """Edge weight: (strength, confidence) with the schema's hard ranges."""

    strength: float = 1.0
    confidence: float = 1.0

    STRENGTH_MIN = -1.1
    STRENGTH_MAX = 1.1

    def __post_init__(self):
        if not (math.isfinite(self.strength) and math.isfinite(self.confidence)):
            raise ValidationError("weight components must be finite")
        if not (self.STRENGTH_MIN <= self.strength <= self.STRENGTH_MAX):
            raise ValidationError(
                f"strength {self.strength} outside [{self.STRENGTH_MIN}, {self.STRENGTH_MAX}]"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0.0, 1.0]")


@dataclass(frozen=True)
class Edge:
    """Directed labeled relation between two timestamps (multigraph)."""

    edge_id: int
    source: int
    destination: int
    relationship: str
    weight: Weight
    meta: dict
    created_at: int


def unit_norm_error(vec: np.ndarray) -> float:
    return abs(float(np.linalg.norm(vec.astype(np.float64, copy=False))) - 1.0)


def validate_record(
    record: MemoryRecord, namespace_dims: Mapping[str, int]
) -> None:
    """Raise the first invariant violation, or return silently.

    Checks kind, presence of the "high" view, unit norms (within 1e-6),
    per-view dimension consistency against the namespace, and meta shape.
    """
    validate_kind(record.kind)
    views = record.embeddings.views
    if HIGH_VIEW not in views:
        raise MissingHighView('record must carry a "high" embedding view')
    names = [HIGH_VIEW] + sorted(n for n in views if n != HIGH_VIEW)
    for name in names:
        vec = views[name]
        known = namespace_dims.get(name)
        if known is not None and vec.shape[0] != known:
            raise DimensionMismatch(
                f"view {name!r} has dim {vec.shape[0]}, namespace uses {known}"
            )
        err = unit_norm_error(vec)
        if not err <= UNIT_NORM_TOL:  # also rejects NaN
            raise NotUnitNorm(
                f"view {name!r} norm deviates from 1.0 by {err:.3g} (> {UNIT_NORM_TOL})"
            )
    validate_meta(record.meta)
