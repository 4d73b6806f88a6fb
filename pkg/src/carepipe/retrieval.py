"""Sparse, dense and hybrid retrieval over care records.

Indexes are immutable once built. Every search returns at most ``k``
:class:`RankedResult` objects ordered by score, ties broken by record id.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any, Protocol, Union

import numpy as np

from .model import UTC, CareRecord, Registries, default_registries
from .text import fnv1a_64, tokenize

SPARSE, DENSE, HYBRID = "sparse", "dense", "hybrid"
METHODS = (SPARSE, DENSE, HYBRID)


@dataclass(frozen=True)
class RetrievalSettings:
    k1: float = 1.2
    b: float = 0.75
    rrf_k: int = 60
    dim: int = 256
    min_similarity: float = 0.3

    def __post_init__(self) -> None:
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError("BM25 needs k1 >= 0 and b in [0, 1]")
        if self.rrf_k < 1 or self.dim < 1:
            raise ValueError("rrf_k and dim must be positive")
        if not -1 <= self.min_similarity <= 1:
            raise ValueError("min_similarity must lie in [-1, 1]")


@dataclass(frozen=True)
class RankedResult:
    record_id: str
    score: float
    rank: int
    method: str

    def to_dict(self) -> dict[str, Any]:
        return {"record_id": self.record_id, "score": self.score, "rank": self.rank, "method": self.method}


@dataclass(frozen=True)
class InsufficientEvidence:
    top_similarity: float | None
    min_similarity: float

    def to_dict(self) -> dict[str, Any]:
        return {"insufficient_evidence": True, "top_similarity": self.top_similarity, "min_similarity": self.min_similarity}


GateResult = Union[list[RankedResult], InsufficientEvidence]


# Scores are kept to 12 decimal places so that mathematically equal scores,
# which floating point may split by an ulp, tie and fall back to id order.
SCORE_PLACES = 12


def _rank(scored: Iterable[tuple[str, float]], k: int, method: str) -> list[RankedResult]:
    rounded = ((rid, round(score, SCORE_PLACES) + 0.0) for rid, score in scored)
    ordered = sorted(rounded, key=lambda p: (-p[1], p[0]))[:k]
    return [RankedResult(rid, score, i + 1, method) for i, (rid, score) in enumerate(ordered)]


def _documents(records: Iterable[CareRecord | tuple[str, str]]) -> list[tuple[str, str]]:
    docs = []
    for r in records:
        docs.append((r.record_id, r.note) if isinstance(r, CareRecord) else (r[0], r[1]))
    ids = [d[0] for d in docs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate record ids in index input")
    return docs


# -- sparse ------------------------------------------------------------------


class InvertedIndex:
    """Term postings plus the corpus statistics BM25 needs.

    Records whose text has no tokens are left out, so every length is positive.
    """

    def __init__(self, records: Iterable[CareRecord | tuple[str, str]]):
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self.lengths: dict[str, int] = {}
        for rid, text in _documents(records):
            tokens = tokenize(text)
            if not tokens:
                continue
            self.lengths[rid] = len(tokens)
            for term, tf in sorted(Counter(tokens).items()):
                self.postings.setdefault(term, []).append((rid, tf))
        self.n_docs = len(self.lengths)
        self.avg_length = sum(self.lengths.values()) / self.n_docs if self.n_docs else 0.0
        self._tf = {term: dict(plist) for term, plist in self.postings.items()}

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, record_id: str) -> int:
        return self._tf.get(term, {}).get(record_id, 0)

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1 + (self.n_docs - df + 0.5) / (df + 0.5))

    @property
    def record_ids(self) -> list[str]:
        return sorted(self.lengths)


def _bm25_term(idf: float, tf: int, dl: int, avgdl: float, k1: float, b: float) -> float:
    return idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))


def bm25_score(query_terms: Sequence[str] | str, record_id: str, index: InvertedIndex, k1: float = 1.2, b: float = 0.75) -> float:
    """Okapi BM25 of one record. Repeated query terms count once per occurrence."""
    if record_id not in index.lengths:
        raise KeyError(record_id)
    terms = tokenize(query_terms) if isinstance(query_terms, str) else list(query_terms)
    dl = index.lengths[record_id]
    score = 0.0
    for term in terms:
        tf = index.tf(term, record_id)
        if tf:
            score += _bm25_term(index.idf(term), tf, dl, index.avg_length, k1, b)
    return score


def sparse_search(query: str, index: InvertedIndex, k: int = 10, k1: float = 1.2, b: float = 0.75) -> list[RankedResult]:
    if k < 1:
        raise ValueError("k must be at least 1")
    terms = tokenize(query)
    scores = dict.fromkeys(index.lengths, 0.0)
    # accumulate in query-term order so the sum matches bm25_score exactly
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for rid, tf in plist:
            scores[rid] += _bm25_term(idf, tf, index.lengths[rid], index.avg_length, k1, b)
    return _rank(scores.items(), k, SPARSE)


# -- dense -------------------------------------------------------------------


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Feature-hashed bag of words: FNV-1a bucket, weight ln(1 + tf), unit norm.

    Text without tokens maps to the zero vector.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token, tf in Counter(tokenize(text)).items():
            vec[fnv1a_64(token) % self.dim] += math.log1p(tf)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class DenseIndex:
    def __init__(self, records: Iterable[CareRecord | tuple[str, str]], embedder: Embedder):
        self.embedder = embedder
        ids, rows = [], []
        for rid, text in _documents(records):
            vec = np.asarray(embedder.embed(text), dtype=float)
            norm = np.linalg.norm(vec)
            if norm == 0:
                continue
            ids.append(rid)
            rows.append(vec / norm)
        self.record_ids = ids
        self.matrix = np.array(rows) if rows else np.zeros((0, embedder.dim))

    def __len__(self) -> int:
        return len(self.record_ids)

    def vector(self, record_id: str) -> np.ndarray:
        return self.matrix[self.record_ids.index(record_id)]

    def similarities(self, query: str) -> dict[str, float]:
        q = np.asarray(self.embedder.embed(query), dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0 or not self.record_ids:
            return dict.fromkeys(self.record_ids, 0.0)
        sims = np.clip(self.matrix @ (q / norm), -1.0, 1.0)
        return {rid: float(s) for rid, s in zip(self.record_ids, sims)}


def dense_search(query: str, index: DenseIndex, k: int = 10) -> list[RankedResult]:
    if k < 1:
        raise ValueError("k must be at least 1")
    return _rank(index.similarities(query).items(), k, DENSE)


# -- hybrid ------------------------------------------------------------------


def rrf_fuse(lists: Sequence[Sequence[RankedResult]], k: int, rrf_k: int = 60) -> list[RankedResult]:
    fused: dict[str, float] = {}
    for results in lists:
        for r in results:
            fused[r.record_id] = fused.get(r.record_id, 0.0) + 1.0 / (rrf_k + r.rank)
    return _rank(fused.items(), k, HYBRID)


def hybrid_search(
    query: str,
    sparse_index: InvertedIndex,
    dense_index: DenseIndex,
    k: int = 10,
    settings: RetrievalSettings | None = None,
) -> list[RankedResult]:
    """Reciprocal-rank fusion of the two methods' top-4k lists.

    Only records with a positive score in a method count as retrieved by it.
    """
    s = settings or RetrievalSettings()
    depth = 4 * k
    sparse = [r for r in sparse_search(query, sparse_index, depth, s.k1, s.b) if r.score > 0]
    dense = [r for r in dense_search(query, dense_index, depth) if r.score > 0]
    return rrf_fuse([sparse, dense], k, s.rrf_k)


def weak_evidence_gate(
    results: Sequence[RankedResult], min_similarity: float = 0.3, top_similarity: float | None = None
) -> GateResult:
    """Return ``InsufficientEvidence`` when the best dense similarity is too low.

    For dense results the top similarity is read off the list; for other
    methods the caller passes it in ``top_similarity``.
    """
    if top_similarity is None:
        if not results:
            return InsufficientEvidence(None, min_similarity)
        if results[0].method != DENSE:
            raise ValueError("top_similarity is required for non-dense results")
        top_similarity = results[0].score
    if not results or top_similarity < min_similarity:
        return InsufficientEvidence(top_similarity, min_similarity)
    return list(results)


class Retriever:
    """Both indexes over one record set, with the evidence gate built in."""

    def __init__(self, records: Iterable[CareRecord | tuple[str, str]], settings: RetrievalSettings | None = None, embedder: Embedder | None = None):
        self.settings = settings or RetrievalSettings()
        docs = _documents(records)
        self.embedder = embedder or HashingEmbedder(self.settings.dim)
        self.sparse = InvertedIndex(docs)
        self.dense = DenseIndex(docs, self.embedder)

    def search(self, query: str, method: str = HYBRID, k: int = 10) -> list[RankedResult]:
        if method == SPARSE:
            return sparse_search(query, self.sparse, k, self.settings.k1, self.settings.b)
        if method == DENSE:
            return dense_search(query, self.dense, k)
        if method == HYBRID:
            return hybrid_search(query, self.sparse, self.dense, k, self.settings)
        raise ValueError(f"unknown method {method!r}")

    def top_similarity(self, query: str) -> float | None:
        top = dense_search(query, self.dense, 1) if len(self.dense) else []
        return top[0].score if top else None

    def gated_search(self, query: str, method: str = HYBRID, k: int = 10) -> GateResult:
        top = self.top_similarity(query)
        if top is None:
            return InsufficientEvidence(None, self.settings.min_similarity)
        return weak_evidence_gate(self.search(query, method, k), self.settings.min_similarity, top)


# -- needle in a haystack ----------------------------------------------------

ROUTINE_TEMPLATES = (
    "{name} had a cup of tea in the lounge.",
    "{name} ate most of the lunch and said it was nice.",
    "{name} walked to the dining room with the frame.",
    "{name} had a shower this morning with help from staff.",
    "{name} slept well and woke up at seven.",
    "{name} took the usual tablets with breakfast.",
    "{name} watched television with the others after dinner.",
    "{name} chatted with a visitor in the garden.",
    "{name} drank a glass of water and some juice.",
    "{name} joined the singing group and smiled a lot.",
    "Helped {name} change into fresh clothes.",
    "{name} read the newspaper by the window.",
)

DEFAULT_NEEDLE = "Arthur Pennington has a severe penicillin allergy and must never be given amoxicillin."


@dataclass(frozen=True)
class NeedleQuery:
    label: str
    text: str


DEFAULT_QUERIES = (
    NeedleQuery("verbatim", DEFAULT_NEEDLE),
    NeedleQuery("unique_term", "penicillin"),
    NeedleQuery("paraphrase", "is Arthur allergic to any antibiotics like amoxicillin"),
    NeedleQuery("unrelated", "quarterly invoice spreadsheet export"),
)


@dataclass
class NeedleReport:
    routine_count: int
    seed: int
    needle_id: str
    ranks: dict[str, dict[str, int | None]] = field(default_factory=dict)
    top_similarity: dict[str, float | None] = field(default_factory=dict)
    gated: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "routine_count": self.routine_count,
            "seed": self.seed,
            "needle_id": self.needle_id,
            "ranks": self.ranks,
            "top_similarity": self.top_similarity,
            "insufficient_evidence": self.gated,
        }


def routine_records(count: int, seed: int, registries: Registries | None = None, start: datetime | None = None) -> list[CareRecord]:
    registries = registries or default_registries()
    rng = random.Random(seed)
    when = start or datetime(2025, 3, 1, 7, 0, tzinfo=UTC)
    out = []
    for i in range(count):
        resident = rng.choice(registries.residents)
        name = resident.aliases[0] if resident.aliases else resident.full_name
        note = rng.choice(ROUTINE_TEMPLATES).format(name=name)
        when = when + timedelta(minutes=rng.randint(5, 60))
        out.append(CareRecord(f"N{i + 1:05d}", resident.id, registries.categories[0].id, when, note, f"routine-{i + 1}", 1.0))
    return out


def needle_harness(
    routine_count: int,
    seed: int = 42,
    needle: str = DEFAULT_NEEDLE,
    queries: Sequence[NeedleQuery] = DEFAULT_QUERIES,
    settings: RetrievalSettings | None = None,
    k: int = 10,
) -> NeedleReport:
    """Hide ``needle`` among ``routine_count`` generated records and rank it."""
    if routine_count < 1:
        raise ValueError("routine_count must be at least 1")
    docs: list[tuple[str, str]] = [(r.record_id, r.note) for r in routine_records(routine_count, seed)]
    needle_id = "NEEDLE"
    # insert the needle at a seeded position so it is not trivially first or last
    pos = random.Random(seed + 1).randrange(len(docs) + 1)
    docs.insert(pos, (needle_id, needle))
    retriever = Retriever(docs, settings)
    depth = len(docs)
    report = NeedleReport(routine_count, seed, needle_id)
    for q in queries:
        ranks: dict[str, int | None] = {}
        for method in METHODS:
            results = retriever.search(q.text, method, depth)
            ranks[method] = next((r.rank for r in results if r.record_id == needle_id), None)
        report.ranks[q.label] = ranks
        report.top_similarity[q.label] = retriever.top_similarity(q.text)
        report.gated[q.label] = isinstance(retriever.gated_search(q.text, DENSE, k), InsufficientEvidence)
    return report


def records_from_mapping(rows: Iterable[Mapping[str, Any]]) -> list[CareRecord]:
    return [CareRecord.from_dict(r) for r in rows]
