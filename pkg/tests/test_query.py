"""Hybrid query pipeline: fusion, phi, scoring, expansion, oracle parity."""

import numpy as np
import pytest

from memdb.embed import HashEmbedder
from memdb.engine import Draft
from memdb.errors import EmbedderMissing, InvalidSpec, NoViews
from memdb.query import (
    Expansion,
    Fusion,
    QuerySpec,
    RankingConfig,
    execute,
    fuse_rrf,
    fuse_weighted,
    phi,
)
from tests.conftest import random_units, unit
from tests.reference import reference_execute


def _seed(ns, n=20, dim=8, seed=0, kinds=("message", "summary")):
    rng = np.random.default_rng(seed)
    vecs = random_units(rng, n, dim)
    return ns.append_batch(
        [
            Draft(kind=kinds[i % len(kinds)], content=f"r{i}", views={"high": vecs[i]})
            for i in range(n)
        ]
    )


class TestFuseRrf:
    def test_item_first_in_both_lists(self):
        # oracle: 1/(60+1) + 1/(60+1) = 2/61 = 0.0327868...
        out = fuse_rrf([[7, 8], [7, 9]], k_rrf=60)
        assert out[0][0] == 7
        assert out[0][1] == pytest.approx(2 / 61, abs=1e-12)

    def test_single_membership(self):
        out = dict(fuse_rrf([[5], [9, 5]], k_rrf=60))
        assert out[9] == pytest.approx(1 / 61, abs=1e-12)

    def test_single_list_preserves_order(self):
        items = [30, 10, 20, 40]
        out = fuse_rrf([items], k_rrf=60)
        assert [ts for ts, _ in out] == items

    def test_ties_by_ascending_timestamp(self):
        out = fuse_rrf([[2], [1]], k_rrf=60)
        assert [ts for ts, _ in out] == [1, 2]


class TestFuseWeighted:
    def test_single_view(self):
        assert fuse_weighted({"high": 0.73}, {"high": 1.0}) == 0.73

    def test_symmetric_mean(self):
        assert fuse_weighted({"a": 1.0, "b": 0.0}, {"a": 1, "b": 1}) == 0.5

    def test_matches_arithmetic_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            sims = {f"v{i}": float(rng.uniform(-1, 1)) for i in range(3)}
            weights = {f"v{i}": float(rng.uniform(0.01, 2)) for i in range(3)}
            got = fuse_weighted(sims, weights)
            want = sum(weights[n] * sims[n] for n in sims) / sum(weights.values())
            assert got == pytest.approx(want, abs=1e-12)

    def test_no_views(self):
        with pytest.raises(NoViews):
            fuse_weighted({"a": 0.5}, {"b": 1.0})


class TestPhi:
    def test_no_edges_no_boost(self, ns):
        (a,) = _seed(ns, 1)
        assert phi(ns, a.id_time, RankingConfig()) == 0.0

    def test_degree_saturation(self, ns):
        # oracle: log2(1 + 255) / 8 = 8/8 = 1.0
        records = _seed(ns, 256)
        src = records[0].id_time
        for r in records[1:]:
            ns.add_edge(src, r.id_time, "fan")
        assert phi(ns, src, RankingConfig()) == 1.0

    def test_degree_one_with_boost(self, ns):
        # oracle: log2(2)/8 + 0.5 = 0.125 + 0.5 = 0.625
        a, b = _seed(ns, 2)
        ns.add_edge(a.id_time, b.id_time, "summary-of")
        cfg = RankingConfig(phi_relation_boost={"summary-of": 0.5})
        assert phi(ns, a.id_time, cfg) == pytest.approx(0.625)

    def test_clamped_to_one(self, ns):
        a, b = _seed(ns, 2)
        ns.add_edge(a.id_time, b.id_time, "x")
        cfg = RankingConfig(phi_relation_boost={"x": 5.0})
        assert phi(ns, a.id_time, cfg) == 1.0


class TestExecute:
    def test_hand_evaluated_score(self, ns):
        # S = 0.6*0.8 + 0.3*1.0 + 0.1*0 = 0.78 for sim=.8, dt=0, phi=0
        high = unit(1, 0, 0, 0)
        target = np.array([0.8, 0.6, 0.0, 0.0], dtype=np.float32)
        rec = ns.append(Draft(kind="m", views={"high": target}), wall_clock=1000)
        spec = QuerySpec(
            window=(rec.id_time, rec.id_time),
            k=1,
            query_vector=high,
            ranking=RankingConfig(alpha=0.6, beta=0.3, gamma=0.1, rank_tau=1000),
        )
        hits = execute(ns, spec)
        assert hits[0].sim == pytest.approx(0.8, abs=1e-6)
        assert hits[0].temporal_decay == 1.0
        assert hits[0].phi == 0.0
        assert hits[0].score == pytest.approx(0.78, abs=1e-6)

    def test_pure_similarity_order(self, ns):
        records = _seed(ns, 50, seed=3)
        rng = np.random.default_rng(4)
        q = random_units(rng, 1, 8)[0]
        spec = QuerySpec(
            window=(records[0].id_time, records[-1].id_time),
            k=5,
            query_vector=q,
            ranking=RankingConfig(alpha=1.0, beta=0.0, gamma=0.0, rank_tau=1),
        )
        hits = execute(ns, spec)
        from memdb.vectors import knn_flat

        flat = knn_flat(ns.views["high"], q, 5)
        assert [h.id_time for h in hits] == [t for t, _ in flat]

    def test_window_excluding_everything(self, ns):
        _seed(ns, 5)
        spec = QuerySpec(window=(1, 2), k=3, query_vector=unit(1, 0, 0, 0, 0, 0, 0, 0))
        assert execute(ns, spec) == []

    def test_score_recomputable(self, ns):
        records = _seed(ns, 30, seed=5)
        rng = np.random.default_rng(6)
        for _ in range(20):
            s, d = rng.choice(records, size=2)
            ns.add_edge(s.id_time, d.id_time, "e")
        spec = QuerySpec(
            window=(records[0].id_time, records[-1].id_time),
            k=10,
            query_vector=random_units(rng, 1, 8)[0],
            ranking=RankingConfig(0.5, 0.3, 0.2, rank_tau=10_000),
        )
        for hit in execute(ns, spec):
            recomputed = 0.5 * hit.sim + 0.3 * hit.temporal_decay + 0.2 * hit.phi
            assert abs(hit.score - recomputed) <= 1e-9

    def test_argmax_invariance_under_weight_scaling(self, ns):
        records = _seed(ns, 40, seed=7)
        rng = np.random.default_rng(8)
        q = random_units(rng, 1, 8)[0]
        window = (records[0].id_time, records[-1].id_time)
        base = QuerySpec(window=window, k=15, query_vector=q,
                         ranking=RankingConfig(0.5, 0.3, 0.2, rank_tau=5000))
        scaled = QuerySpec(window=window, k=15, query_vector=q,
                           ranking=RankingConfig(1.5, 0.9, 0.6, rank_tau=5000))
        assert [h.id_time for h in execute(ns, base)] == [
            h.id_time for h in execute(ns, scaled)
        ]

    def test_determinism(self, ns):
        records = _seed(ns, 25, seed=9)
        rng = np.random.default_rng(10)
        q = random_units(rng, 1, 8)[0]
        spec = QuerySpec(window=(records[0].id_time, records[-1].id_time), k=7,
                         query_vector=q)
        a = execute(ns, spec)
        b = execute(ns, spec)
        assert a == b

    def test_text_query_requires_embedder(self, ns):
        _seed(ns, 3)
        spec = QuerySpec(window=(0, ns.last_minted), k=2, query_text="hello")
        with pytest.raises(EmbedderMissing):
            execute(ns, spec)

    def test_missing_query_entirely(self, ns):
        _seed(ns, 3)
        with pytest.raises(InvalidSpec):
            execute(ns, QuerySpec(window=(0, ns.last_minted), k=2))

    def test_meta_filters(self, ns):
        rng = np.random.default_rng(11)
        vecs = random_units(rng, 6, 4)
        records = ns.append_batch(
            [
                Draft(kind="m", views={"high": vecs[i]}, meta={"topic": "a" if i % 2 else "b"})
                for i in range(6)
            ]
        )
        spec = QuerySpec(
            window=(records[0].id_time, records[-1].id_time),
            k=10,
            query_vector=vecs[0],
            meta_equals={"topic": "a"},
            ranking=RankingConfig(1.0, 0.0, 0.0, rank_tau=1),
        )
        hits = execute(ns, spec)
        assert all(ns.get(h.id_time).meta["topic"] == "a" for h in hits)
        assert len(hits) == 3


class TestExpansion:
    def _store(self, ns):
        v = unit(1, 0, 0, 0)
        near = unit(1, 0.05, 0, 0)
        far = unit(0, 0, 1, 0)
        a = ns.append(Draft(kind="m", content="seed", views={"high": v}), wall_clock=1000)
        b = ns.append(Draft(kind="m", content="near", views={"high": near}), wall_clock=5_000_000)
        c = ns.append(Draft(kind="m", content="far", views={"high": far}), wall_clock=6_000_000)
        ns.add_edge(a.id_time, b.id_time, "related-to")
        ns.add_edge(a.id_time, c.id_time, "related-to")
        return a, b, c

    def test_threshold_admits_only_coherent_targets(self, ns):
        a, b, c = self._store(ns)
        spec = QuerySpec(
            window=(a.id_time, a.id_time),  # only the seed is in-window
            k=5,
            query_vector=unit(1, 0, 0, 0),
            expansion=Expansion(threshold=0.9),
            ranking=RankingConfig(1.0, 0.0, 0.0, rank_tau=1),
        )
        hits = execute(ns, spec)
        ids = [h.id_time for h in hits]
        assert a.id_time in ids and b.id_time in ids
        assert c.id_time not in ids  # exp(-sqrt(2)) = 0.243 < 0.9
        expanded = [h for h in hits if h.provenance.kind == "expanded"]
        assert expanded and expanded[0].provenance.hop == 1

    def test_threshold_one_requires_identical_vectors(self, ns):
        v = unit(1, 2, 0, 0)
        a = ns.append(Draft(kind="m", views={"high": v}), wall_clock=100)
        b = ns.append(Draft(kind="m", views={"high": v}), wall_clock=2_000_000)
        nearly = unit(1, 2.0001, 0, 0)
        c = ns.append(Draft(kind="m", views={"high": nearly}), wall_clock=3_000_000)
        ns.add_edge(a.id_time, b.id_time, "x")
        ns.add_edge(a.id_time, c.id_time, "x")
        spec = QuerySpec(
            window=(a.id_time, a.id_time), k=5, query_vector=v,
            expansion=Expansion(threshold=1.0),
        )
        ids = [h.id_time for h in execute(ns, spec)]
        assert b.id_time in ids
        assert c.id_time not in ids

    def test_lowering_threshold_never_removes_hits(self, ns):
        records = _seed(ns, 15, seed=12)
        rng = np.random.default_rng(13)
        for _ in range(30):
            s, d = rng.choice(records, size=2)
            ns.add_edge(s.id_time, d.id_time, "e")
        window = (records[0].id_time, records[4].id_time)
        q = random_units(rng, 1, 8)[0]
        admitted_prev: set = set()
        for threshold in (0.9, 0.6, 0.3, 0.1):
            spec = QuerySpec(window=window, k=50, query_vector=q,
                             expansion=Expansion(threshold=threshold))
            admitted = {
                h.id_time for h in execute(ns, spec)
                if h.provenance.kind == "expanded"
            }
            assert admitted_prev <= admitted
            admitted_prev = admitted

    def test_relational_filter_restricts_expansion(self, ns):
        a, b, c = self._store(ns)
        d = ns.append(Draft(kind="m", views={"high": unit(1, 0.01, 0, 0)}), wall_clock=9_000_000)
        ns.add_edge(a.id_time, d.id_time, "summary-of")
        spec = QuerySpec(
            window=(a.id_time, a.id_time), k=10, query_vector=unit(1, 0, 0, 0),
            expansion=Expansion(threshold=0.5),
            relationships={"summary-of"},
        )
        ids = [h.id_time for h in execute(ns, spec)]
        assert d.id_time in ids
        assert b.id_time not in ids  # its edge label is filtered out

    def test_multi_hop_each_hop_must_clear_threshold(self, ns):
        v1 = unit(1, 0, 0, 0)
        v2 = unit(1, 0.1, 0, 0)
        v3 = unit(1, 0.2, 0, 0)
        a = ns.append(Draft(kind="m", views={"high": v1}), wall_clock=100)
        b = ns.append(Draft(kind="m", views={"high": v2}), wall_clock=2_000_000)
        c = ns.append(Draft(kind="m", views={"high": v3}), wall_clock=3_000_000)
        ns.add_edge(a.id_time, b.id_time, "x")
        ns.add_edge(b.id_time, c.id_time, "x")
        one_hop = QuerySpec(window=(a.id_time, a.id_time), k=10, query_vector=v1,
                            expansion=Expansion(threshold=0.9, max_hops=1))
        two_hop = QuerySpec(window=(a.id_time, a.id_time), k=10, query_vector=v1,
                            expansion=Expansion(threshold=0.9, max_hops=2))
        ids1 = {h.id_time for h in execute(ns, one_hop)}
        ids2 = {h.id_time for h in execute(ns, two_hop)}
        assert c.id_time not in ids1
        assert c.id_time in ids2
        hops = {h.id_time: h.provenance.hop for h in execute(ns, two_hop)}
        assert hops[c.id_time] == 2


class TestOracleEquivalence:
    def _random_store(self, ns, seed, n=60, n_edges=120, dim=8):
        rng = np.random.default_rng(seed)
        vecs = random_units(rng, n, dim)
        kinds = ["message", "summary", "state"]
        drafts = []
        for i in range(n):
            meta = {}
            if rng.random() < 0.5:
                meta["topic"] = str(rng.integers(3))
            if rng.random() < 0.3:
                meta["flag"] = True
            drafts.append(
                Draft(kind=kinds[int(rng.integers(3))], views={"high": vecs[i]}, meta=meta)
            )
        records = ns.append_batch(drafts)
        labels = ["reply", "related-to", "summary-of"]
        for _ in range(n_edges):
            s, d = rng.choice(records, size=2)
            ns.add_edge(s.id_time, d.id_time, labels[int(rng.integers(3))])
        return records, rng

    def test_exact_mode_matches_reference(self, ns):
        records, rng = self._random_store(ns, 42)
        embedder = HashEmbedder(dimension=8)
        times = [r.id_time for r in records]
        for trial in range(60):
            lo, hi = sorted(rng.integers(times[0] - 2, times[-1] + 2, size=2))
            spec = QuerySpec(
                window=(int(lo), int(hi)),
                k=int(rng.integers(1, 12)),
                query_vector=random_units(rng, 1, 8)[0],
                kind_filter=("summary" if rng.random() < 0.3 else None),
                meta_equals=({"topic": "1"} if rng.random() < 0.3 else None),
                meta_exists=(["flag"] if rng.random() < 0.2 else None),
                relationships=({"reply", "summary-of"} if rng.random() < 0.3 else None),
                expansion=(
                    Expansion(threshold=float(rng.uniform(0.1, 1.0)),
                              max_hops=int(rng.integers(1, 3)))
                    if rng.random() < 0.5
                    else None
                ),
                ranking=RankingConfig(
                    alpha=float(rng.uniform(0, 1)),
                    beta=float(rng.uniform(0, 1)),
                    gamma=float(rng.uniform(0, 0.5)) if rng.random() < 0.7 else 0.0,
                    rank_tau=int(rng.integers(1000, 10_000_000)) if rng.random() < 0.7 else None,
                    phi_relation_boost=({"summary-of": 0.4} if rng.random() < 0.4 else {}),
                ),
                fusion=rng.choice(
                    [Fusion(), Fusion("weighted", {"high": 0.7, "low": 0.3}), Fusion("rrf", k_rrf=60)]
                ),
            )
            got = [(h.id_time, h.score) for h in execute(ns, spec, embedder)]
            want = reference_execute(ns, spec, embedder)
            assert [t for t, _ in got] == [t for t, _ in want], f"trial {trial}"
            for (_, gs), (_, ws) in zip(got, want):
                assert abs(gs - ws) <= 1e-9, f"trial {trial}"
