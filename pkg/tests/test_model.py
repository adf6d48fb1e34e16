"""Core types: minting, validation, weight ranges."""

import numpy as np
import pytest

from memdb.errors import (
    DimensionMismatch,
    EmptyKind,
    MissingHighView,
    NotUnitNorm,
    ValidationError,
)
from memdb.model import (
    EmbeddingSet,
    MemoryRecord,
    Weight,
    mint_timestamp,
    validate_meta,
    validate_namespace,
    validate_record,
)
from tests.conftest import unit


class TestMint:
    def test_clock_ahead_of_last(self):
        assert mint_timestamp(1000, 500) == 1000

    def test_collision_bumps_by_one(self):
        assert mint_timestamp(1000, 1000) == 1001

    def test_clock_behind_last(self):
        # oracle: replay a 3-insert sequence with a frozen clock against a
        # reference counter that hands out max(clock, prev + 1)
        frozen_clock = 1000
        reference, minted = [], []
        prev = 1500
        for _ in range(3):
            reference.append(max(frozen_clock, prev + 1))
            prev = reference[-1]
        last = 1500
        for _ in range(3):
            last = mint_timestamp(frozen_clock, last)
            minted.append(last)
        assert minted == reference == [1501, 1502, 1503]

    def test_strictly_increasing_for_any_sequence(self):
        rng = np.random.default_rng(0)
        last = 0
        for _ in range(2000):
            clock = int(rng.integers(1, 1_000_000))
            nxt = mint_timestamp(clock, last)
            assert nxt > last
            last = nxt

    def test_rejects_nonpositive_clock(self):
        with pytest.raises(ValidationError):
            mint_timestamp(0, 10)


class TestValidateRecord:
    def _record(self, views):
        return MemoryRecord(1, "message", "hi", EmbeddingSet.build(views), {})

    def test_accepts_matching_dims(self):
        validate_record(self._record({"high": unit(1, 2, 3)}), {"high": 3})

    def test_zero_vector_is_not_unit(self):
        with pytest.raises(NotUnitNorm):
            validate_record(
                self._record({"high": np.zeros(4, dtype=np.float32)}), {}
            )

    def test_dim_mismatch_against_namespace(self):
        rec = self._record({"high": unit(1, 0), "low": unit(1, 0, 0, 0)})
        with pytest.raises(DimensionMismatch):
            validate_record(rec, {"high": 2, "low": 2})

    def test_missing_high_view(self):
        with pytest.raises(MissingHighView):
            validate_record(self._record({"low": unit(1, 0)}), {})

    def test_empty_kind(self):
        rec = MemoryRecord(1, "", None, EmbeddingSet.build({"high": unit(1, 0)}), {})
        with pytest.raises(EmptyKind):
            validate_record(rec, {})

    def test_kind_length_cap(self):
        rec = MemoryRecord(1, "x" * 65, None, EmbeddingSet.build({"high": unit(1, 0)}), {})
        with pytest.raises(EmptyKind):
            validate_record(rec, {})

    def test_norm_tolerance_boundary(self):
        vec = unit(3, 4).astype(np.float64) * (1 + 5e-6)
        rec = self._record({"high": vec.astype(np.float32)})
        with pytest.raises(NotUnitNorm):
            validate_record(rec, {})


class TestWeight:
    def test_defaults(self):
        w = Weight()
        assert (w.strength, w.confidence) == (1.0, 1.0)

    @pytest.mark.parametrize("strength", [-1.1, 1.1, 0.0, -0.5])
    def test_strength_range_inclusive(self, strength):
        assert Weight(strength=strength).strength == strength

    @pytest.mark.parametrize("strength", [-1.1000001, 1.2, 2.0, float("nan")])
    def test_strength_out_of_range(self, strength):
        with pytest.raises(ValidationError):
            Weight(strength=strength)

    @pytest.mark.parametrize("confidence", [-0.01, 1.01])
    def test_confidence_out_of_range(self, confidence):
        with pytest.raises(ValidationError):
            Weight(confidence=confidence)


class TestNamespaceAndMeta:
    def test_namespace_pattern(self):
        validate_namespace("agent_1-x")
        for bad in ["", "UPPER", "has space", "a" * 129, "dot.dot"]:
            with pytest.raises(ValidationError):
                validate_namespace(bad)

    def test_meta_shapes(self):
        validate_meta({"a": 1, "b": [1, 2, "x"], "c": {"d": 1, "e": [True]}})
        with pytest.raises(ValidationError):
            validate_meta({"a": {"b": {"c": 1}}})  # two levels of nesting
        with pytest.raises(ValidationError):
            validate_meta({"a": [{"b": 1}]})  # dict inside list
