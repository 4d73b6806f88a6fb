"""Evaluation formulas: Wilson intervals, confusion-matrix rates, joint
accuracy, cosine and word mover's distances, percentile summaries."""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Protocol

import numpy as np

from .text import tokenize
from .transport import solve_transport

Z_95 = 1.96
WMD_MAX_TOKENS = 64


class MetricError(ValueError):
    pass


class ZeroSample(MetricError):
    pass


class UndefinedRate(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class ZeroVector(MetricError):
    pass


class EmptyDocument(MetricError):
    pass


class DocumentTooLong(MetricError):
    pass


class EmptySample(MetricError):
    pass


# -- proportions -------------------------------------------------------------


@dataclass(frozen=True)
class ProportionEstimate:
    successes: int
    n: int
    p_hat: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict[str, Any]:
        return {"successes": self.successes, "n": self.n, "p_hat": self.p_hat, "ci_low": self.ci_low, "ci_high": self.ci_high}


def wilson_interval(successes: int, n: int, z: float = Z_95) -> ProportionEstimate:
    if n <= 0:
        raise ZeroSample("a proportion needs at least one trial")
    if not 0 <= successes <= n:
        raise MetricError(f"successes={successes} outside [0, {n}]")
    p = successes / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = p + z2 / (2 * n)
    spread = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    low = (centre - spread) / denom
    high = (centre + spread) / denom
    # the closed form can land a hair outside [0, p] at the boundaries
    low = max(0.0, min(low, p))
    high = min(1.0, max(high, p))
    return ProportionEstimate(successes, n, p, low, high)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise MetricError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_pairs(cls, predicted: Iterable[bool], actual: Iterable[bool]) -> ConfusionMatrix:
        predicted, actual = list(predicted), list(actual)
        if len(predicted) != len(actual):
            raise LengthMismatch(f"{len(predicted)} predictions for {len(actual)} labels")
        tp = sum(p and a for p, a in zip(predicted, actual))
        fp = sum(p and not a for p, a in zip(predicted, actual))
        fn = sum(a and not p for p, a in zip(predicted, actual))
        return cls(tp, fp, fn, len(actual) - tp - fp - fn)

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedRate("accuracy of an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def precision(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fp == 0:
        raise UndefinedRate("precision with no positive predictions")
    return cm.tp / (cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0:
        raise UndefinedRate("recall with no positive labels")
    return cm.tp / (cm.tp + cm.fn)


def joint_id_category_accuracy(
    predictions: Sequence[tuple[str, str] | None],
    truths: Sequence[tuple[str, str]],
    z: float = Z_95,
) -> ProportionEstimate:
    """Fraction of items whose resident and category are both right.

    A ``None`` prediction (nothing emitted) counts as a miss.
    """
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truths)} truths")
    hits = sum(1 for p, t in zip(predictions, truths) if p is not None and tuple(p) == tuple(t))
    return wilson_interval(hits, len(truths), z)


# -- distances ---------------------------------------------------------------


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise MetricError(f"dimension mismatch {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def cosine_distance(x, y) -> float:
    return 1.0 - cosine_similarity(x, y)


class TokenEmbedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def _distribution(doc: str | Sequence[str]) -> tuple[list[str], np.ndarray]:
    tokens = tokenize(doc) if isinstance(doc, str) else list(doc)
    if not tokens:
        raise EmptyDocument("document has no tokens")
    counts = Counter(tokens)
    if len(counts) > WMD_MAX_TOKENS:
        raise DocumentTooLong(f"{len(counts)} distinct tokens exceeds the cap of {WMD_MAX_TOKENS}")
    vocab = sorted(counts)
    weights = np.array([counts[w] for w in vocab], dtype=float)
    return vocab, weights / weights.sum()


def wmd(doc1: str | Sequence[str], doc2: str | Sequence[str], embedder: TokenEmbedder) -> float:
    """Exact word mover's distance with Euclidean ground cost."""
    v1, a = _distribution(doc1)
    v2, b = _distribution(doc2)
    e1 = np.array([embedder.embed(w) for w in v1])
    e2 = np.array([embedder.embed(w) for w in v2])
    cost = np.linalg.norm(e1[:, None, :] - e2[None, :, :], axis=2)
    value, _ = solve_transport(a, b, cost)
    return max(0.0, value)


# -- summaries ---------------------------------------------------------------


@dataclass(frozen=True)
class DistanceSummary:
    n: int
    mean: float
    p25: float
    p75: float

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "mean": self.mean, "p25": self.p25, "p75": self.p75}


def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Linear interpolation between order statistics at rank q*(n-1)."""
    if not sorted_values:
        raise EmptySample("percentile of an empty sample")
    rank = q * (len(sorted_values) - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = rank - lo
    return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * frac


def distance_summary(samples: Iterable[float]) -> DistanceSummary:
    values = sorted(float(s) for s in samples)
    if not values:
        raise EmptySample("distance summary of an empty sample")
    return DistanceSummary(len(values), math.fsum(values) / len(values), percentile(values, 0.25), percentile(values, 0.75))


def percent(value: float, places: int = 2) -> str:
    """Display form: percent, rounded half-up."""
    quant = Decimal(1).scaleb(-places)
    return str((Decimal(repr(value)) * 100).quantize(quant, rounding=ROUND_HALF_UP))


# -- machine output ----------------------------------------------------------


@dataclass(frozen=True)
class MetricResult:
    """One line of metric output: a proportion, a distance summary or a scalar."""

    metric: str
    estimate: ProportionEstimate | None = None
    summary: DistanceSummary | None = None
    value: Any = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"metric": self.metric}
        if self.estimate is not None:
            out.update(self.estimate.to_dict())
        elif self.summary is not None:
            out.update(self.summary.to_dict())
        else:
            out["value"] = self.value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MetricResult:
        if "p_hat" in data:
            est = ProportionEstimate(data["successes"], data["n"], data["p_hat"], data["ci_low"], data["ci_high"])
            return cls(data["metric"], estimate=est)
        if "mean" in data:
            return cls(data["metric"], summary=DistanceSummary(data["n"], data["mean"], data["p25"], data["p75"]))
        return cls(data["metric"], value=data.get("value"))

    def field(self, name: str) -> Any:
        return self.to_dict().get(name)


def dump_metrics(results: Iterable[MetricResult]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results)


def load_metrics(text: str) -> dict[str, MetricResult]:
    out: dict[str, MetricResult] = {}
    for line in text.splitlines():
        if line.strip():
            r = MetricResult.from_dict(json.loads(line))
            out[r.metric] = r
    return out


# Every metric name a replay can emit; assurance bindings are checked against it.
METRIC_NAMES = frozenset(
    {
        "transcript_ingest",
        "joint_id_category_accuracy",
        "joint_id_category_accuracy_with_deferrals",
        "resident_id_match",
        "category_match",
        "reminder_recognition_accuracy",
        "reminder_precision",
        "reminder_recall",
        "reminder_confusion",
        "database_insertion_accuracy",
        "reminder_count_match",
        "hallucination_count",
        "reminder_cosine_distance",
        "reminder_wmd",
        "note_cosine_distance",
        "note_wmd",
        "reminder_trap_false_positives",
        "underspecified_silent_events",
        "clarification_count",
        "disposition_counts",
        "cumulative_error_E",
        "latency_mean_ms",
        "latency_max_ms",
        "error_budget_ok",
        "latency_budget_ok",
        "audit_completeness",
        "retrieval_standard_hit_rate",
        "needle_dense_rank_verbatim",
        "needle_sparse_rank_unique",
        "needle_hybrid_rank_paraphrase",
        "needle_unrelated_gated",
    }
)
