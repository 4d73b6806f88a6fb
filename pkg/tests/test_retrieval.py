from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carepipe.retrieval import (
    DENSE,
    HYBRID,
    SPARSE,
    DenseIndex,
    HashingEmbedder,
    InsufficientEvidence,
    InvertedIndex,
    RankedResult,
    Retriever,
    bm25_score,
    dense_search,
    hybrid_search,
    needle_harness,
    routine_records,
    rrf_fuse,
    sparse_search,
    weak_evidence_gate,
)

import oracles


def test_bm25_absent_term_scores_zero():
    idx = InvertedIndex([("a", "tea and toast"), ("b", "a walk")])
    assert bm25_score(["garden"], "a", idx) == 0.0


def test_bm25_single_record_example():
    idx = InvertedIndex([("a", "tea")])
    assert idx.idf("tea") == pytest.approx(math.log(4 / 3))
    assert bm25_score("tea", "a", idx) == pytest.approx(0.2877, abs=5e-5)
    assert bm25_score("tea", "a", idx) == pytest.approx(math.log(4 / 3), abs=1e-15)


def test_index_statistics():
    idx = InvertedIndex([("a", "tea tea toast"), ("b", "toast"), ("c", "!!!")])
    assert idx.n_docs == 2 and idx.df("toast") == 2 and idx.tf("tea", "a") == 2
    assert idx.avg_length == 2.0 and "c" not in idx.lengths
    with pytest.raises(ValueError):
        InvertedIndex([("a", "x"), ("a", "y")])


def test_sparse_top_k_matches_brute_force_on_50_records():
    rng = random.Random(50)
    docs = [(f"r{i}", " ".join(rng.choice(oracles.WORDS) for _ in range(rng.randint(1, 10)))) for i in range(50)]
    idx = InvertedIndex(docs)
    for _ in range(20):
        q = oracles.random_query(rng)
        got = [(r.record_id, r.score) for r in sparse_search(q, idx, 10)]
        assert got == oracles.top_k(oracles.bm25_all(docs, q), 10)


def test_dense_identical_text_ranks_first():
    docs = [("a", "tea and toast"), ("b", "a walk in the garden"), ("c", "tablets")]
    (top, *_) = dense_search("a walk in the garden", DenseIndex(docs, HashingEmbedder()), 3)
    assert top.record_id == "b" and top.score == pytest.approx(1.0)


def test_dense_k_larger_than_corpus():
    docs = [("a", "tea"), ("b", "toast")]
    assert len(dense_search("tea", DenseIndex(docs, HashingEmbedder()), 10)) == 2


def test_dense_matches_brute_force_on_10_records():
    rng = random.Random(10)
    docs = [(f"r{i}", " ".join(rng.choice(oracles.WORDS) for _ in range(rng.randint(1, 8)))) for i in range(10)]
    index = DenseIndex(docs, HashingEmbedder())
    for _ in range(10):
        q = oracles.random_query(rng)
        got = [(r.record_id, r.score) for r in dense_search(q, index, 10)]
        want = oracles.top_k(oracles.cosine_all(docs, q), 10)
        assert [g[0] for g in got] == [w[0] for w in want]
        assert [g[1] for g in got] == pytest.approx([w[1] for w in want], abs=1e-12)


def test_dense_vectors_are_unit_and_bounded():
    records = routine_records(100, seed=3)
    index = DenseIndex(records, HashingEmbedder())
    assert np.allclose(np.linalg.norm(index.matrix, axis=1), 1.0, atol=1e-9)
    sims = index.similarities("tea in the lounge with the tablets")
    assert all(0.0 <= s <= 1.0 for s in sims.values())


def test_embedder_is_deterministic():
    e = HashingEmbedder()
    assert np.array_equal(e.embed("tea and toast"), e.embed("tea and toast"))
    assert not e.embed("!!!").any()


def test_rrf_hand_values():
    a = [RankedResult("x", 9.0, 1, SPARSE), RankedResult("y", 3.0, 2, SPARSE)]
    b = [RankedResult("x", 0.9, 1, DENSE)]
    fused = {r.record_id: r.score for r in rrf_fuse([a, b], 10)}
    assert fused["x"] == pytest.approx(2 / 61)
    assert rrf_fuse([[RankedResult("z", 1.0, 1, DENSE)]], 10)[0].score == pytest.approx(1 / 61)
    assert fused["y"] == pytest.approx(1 / 62)


def test_single_record_corpus():
    r = Retriever([("only", "tea and toast")])
    for method in (SPARSE, DENSE, HYBRID):
        (top,) = r.search("tea", method, 5)
        assert top.record_id == "only" and top.rank == 1


@given(st.lists(st.integers(1, 30), min_size=1, max_size=4, unique=True), st.integers(0, 3), st.integers(1, 29))
def test_fusion_monotonicity(ranks, which, better):
    """Moving a record up in one list never lowers its fused score."""
    lists = [[RankedResult(f"o{i}", 0.0, rank, DENSE)] for i, rank in enumerate(ranks)]
    lists = [lst + [RankedResult("target", 0.0, ranks[0], DENSE)] for lst in lists]
    before = {r.record_id: r.score for r in rrf_fuse(lists, 100)}["target"]
    j = which % len(lists)
    old = lists[j][-1].rank
    lists[j][-1] = RankedResult("target", 0.0, min(old, better), DENSE)
    after = {r.record_id: r.score for r in rrf_fuse(lists, 100)}["target"]
    assert after >= before


def test_ranked_results_are_consistent():
    r = Retriever(routine_records(60, seed=9))
    for method in (SPARSE, DENSE, HYBRID):
        results = r.search("tablets with breakfast", method, 10)
        assert [x.rank for x in results] == list(range(1, len(results) + 1))
        assert all(a.score >= b.score for a, b in zip(results, results[1:]))


def test_rebuild_is_deterministic():
    records = routine_records(80, seed=4)
    a, b = Retriever(records), Retriever(records)
    for method in (SPARSE, DENSE, HYBRID):
        assert a.search("shower with help", method) == b.search("shower with help", method)


def test_hybrid_uses_positive_entries_only():
    docs = [("a", "tea"), ("b", "toast")]
    fused = hybrid_search("tea", InvertedIndex(docs), DenseIndex(docs, HashingEmbedder()), 10)
    assert [r.record_id for r in fused] == ["a"]


def test_gate_examples():
    assert isinstance(Retriever([]).gated_search("tea"), InsufficientEvidence)
    passing = [RankedResult("a", 1.0, 1, DENSE)]
    assert weak_evidence_gate(passing, 0.3) == passing
    assert isinstance(weak_evidence_gate([RankedResult("a", 0.1, 1, DENSE)], 0.3), InsufficientEvidence)
    with pytest.raises(ValueError):
        weak_evidence_gate([RankedResult("a", 5.0, 1, SPARSE)], 0.3)
    assert isinstance(weak_evidence_gate([RankedResult("a", 5.0, 1, SPARSE)], 0.3, top_similarity=0.2), InsufficientEvidence)


def test_needle_examples():
    for n in (1, 50):
        rep = needle_harness(n, seed=42)
        assert rep.ranks["verbatim"][DENSE] == 1
        assert rep.ranks["unique_term"][SPARSE] == 1
    rep = needle_harness(500, seed=42)
    assert rep.gated["unrelated"] and rep.top_similarity["unrelated"] < 0.3
    assert not rep.gated["verbatim"]


def test_needle_unique_term_beats_brute_force_scores():
    """IDF dominance: no routine record scores the unique term above zero."""
    docs = [(r.record_id, r.note) for r in routine_records(500, seed=42)]
    docs.append(("NEEDLE", "Arthur Pennington has a severe penicillin allergy and must never be given amoxicillin."))
    scores = oracles.bm25_all(docs, "penicillin")
    assert max(s for rid, s in scores.items() if rid != "NEEDLE") == 0.0
    assert scores["NEEDLE"] > 0
