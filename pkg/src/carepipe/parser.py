"""Rule-based transcript parser: resident, category and reminder extraction.

The parser never guesses. Unclear residents or categories, or an overall
confidence below the gate, produce a :class:`ClarificationRequest` instead of
a record. Reminders whose time is underspecified are still returned, carrying
an ``Ambiguous`` schedule for the scheduler to hold back.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

from .model import (
    Ambiguous,
    CareCategory,
    CareRecord,
    Registries,
    ReminderIntent,
    Resident,
    ScheduleSpec,
    Transcript,
    format_timestamp,
    schedule_from_dict,
    validate_record,
)
from .temporal import TimeSettings, extract_reminder, remove_sentence
from .text import similarity, tokenize


@dataclass(frozen=True)
class ParserSettings:
    fuzzy_threshold: float = 0.8
    tie_tolerance: float = 0.05
    gate_threshold: float = 0.7
    time: TimeSettings = field(default_factory=TimeSettings)

    def __post_init__(self) -> None:
        for name in ("fuzzy_threshold", "tie_tolerance", "gate_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")


# ---------------------------------------------------------------------------
# sub-results


@dataclass(frozen=True)
class Match:
    """A single winning candidate with its confidence."""

    item: Any
    confidence: float


@dataclass(frozen=True)
class AmbiguousMatch:
    candidates: tuple[Any, ...]


@dataclass(frozen=True)
class NotFound:
    pass


@dataclass(frozen=True)
class ClarificationRequest:
    """A question put back to the member of staff before anything is stored.

    ``field`` is one of ``resident``, ``category``, ``time`` or
    ``confirmation``; ``candidates`` are ids (or, for time, the empty tuple).
    """

    field: str
    candidates: tuple[str, ...]
    prompt: str
    subject_id: str
    request_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "field": self.field,
            "candidates": list(self.candidates),
            "prompt": self.prompt,
            "subject_id": self.subject_id,
            "request_id": self.request_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ClarificationRequest":
        return cls(d["field"], tuple(d.get("candidates") or ()), d["prompt"], d["subject_id"], d.get("request_id", ""))


PARSED = "parsed"
CLARIFICATION_NEEDED = "clarification_needed"


@dataclass(frozen=True)
class ParseOutcome:
    """Result of parsing one transcript.

    ``record`` is normally a validated :class:`CareRecord`. Outputs from
    external adapters or fault wrappers may carry a raw field mapping instead;
    the pipeline validates either form before inserting.
    """

    disposition: str
    record: CareRecord | Mapping[str, Any] | None = None
    reminder: ReminderIntent | None = None
    clarification: ClarificationRequest | None = None

    def __post_init__(self) -> None:
        if self.disposition == PARSED:
            if self.record is None:
                raise ValueError("parsed outcome without a record")
        elif self.disposition == CLARIFICATION_NEEDED:
            if self.clarification is None or self.record is not None:
                raise ValueError("clarification outcome must carry a request and no record")
        else:
            raise ValueError(f"unknown disposition {self.disposition!r}")

    @property
    def record_fields(self) -> dict[str, Any] | None:
        if self.record is None:
            return None
        if isinstance(self.record, CareRecord):
            return self.record.to_dict()
        return dict(self.record)

    def to_dict(self) -> dict[str, Any]:
        return {
            "disposition": self.disposition,
            "record": self.record_fields,
            "reminder": self.reminder.to_dict() if self.reminder else None,
            "clarification": self.clarification.to_dict() if self.clarification else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ParseOutcome":
        reminder = d.get("reminder")
        clar = d.get("clarification")
        return cls(
            disposition=d["disposition"],
            record=d.get("record"),
            reminder=ReminderIntent.from_dict(reminder) if reminder else None,
            clarification=ClarificationRequest.from_dict(clar) if clar else None,
        )


class ParserAdapter(Protocol):
    """Anything that turns a transcript into a :class:`ParseOutcome`.

    Implementations must be deterministic for a fixed configuration.
    ``overrides`` carries answers to earlier clarification requests
    (``resident_id``, ``category_id``, ``schedule``).
    """

    def parse(
        self,
        transcript: Transcript,
        registries: Registries,
        overrides: Mapping[str, Any] | None = None,
    ) -> ParseOutcome: ...


# ---------------------------------------------------------------------------
# extractors


def _windows(tokens: Sequence[str], size: int):
    for i in range(len(tokens) - size + 1):
        yield i, " ".join(tokens[i:i + size])


def match_resident(
    text: str,
    residents: Sequence[Resident],
    threshold: float = 0.8,
    tie_tolerance: float = 0.05,
) -> Match | AmbiguousMatch | NotFound:
    """Find the resident mentioned in ``text``.

    Exact full-name or alias mentions score 1.0; a mention covered by a longer
    exact mention of someone else (``Mary`` inside ``Mary Collins``) is
    discarded. Otherwise the best normalised edit similarity over same-length
    token windows is used.
    """
    if not residents:
        raise ValueError("resident registry is empty")
    tokens = tokenize(text)
    exact: list[tuple[int, int, Resident]] = []
    fuzzy: dict[str, float] = {}
    for resident in residents:
        best = 0.0
        for name in resident.names:
            name_tokens = tokenize(name)
            if not name_tokens:
                continue
            target = " ".join(name_tokens)
            for i, window in _windows(tokens, len(name_tokens)):
                if window == target:
                    exact.append((i, i + len(name_tokens), resident))
                    best = 1.0
                else:
                    best = max(best, similarity(window, target, floor=threshold))
        fuzzy[resident.id] = best

    if exact:
        spans = [
            e for e in exact
            if not any(o[0] <= e[0] and e[1] <= o[1] and (o[1] - o[0]) > (e[1] - e[0])
                       and o[2].id != e[2].id for o in exact)
        ]
        winners = sorted({e[2].id: e[2] for e in spans}.values(), key=lambda r: r.id)
        if len(winners) == 1:
            return Match(winners[0], 1.0)
        return AmbiguousMatch(tuple(winners))

    by_id = {r.id: r for r in residents}
    ranked = sorted(
        ((score, rid) for rid, score in fuzzy.items() if score >= threshold),
        key=lambda p: (-p[0], p[1]),
    )
    if not ranked:
        return NotFound()
    top = ranked[0][0]
    close = [rid for score, rid in ranked if top - score <= tie_tolerance + 1e-12]
    if len(close) > 1:
        return AmbiguousMatch(tuple(by_id[rid] for rid in close))
    return Match(by_id[ranked[0][1]], top)


def _count_phrase(tokens: Sequence[str], phrase_tokens: Sequence[str]) -> int:
    n = len(phrase_tokens)
    if n == 0:
        return 0
    target = list(phrase_tokens)
    return sum(1 for i in range(len(tokens) - n + 1) if list(tokens[i:i + n]) == target)


def category_hits(text: str, categories: Sequence[CareCategory]) -> dict[str, int]:
    tokens = tokenize(text)
    return {
        cat.id: sum(_count_phrase(tokens, tokenize(p)) for p in cat.lexicon)
        for cat in categories
    }


def classify_category(
    text: str, categories: Sequence[CareCategory]
) -> Match | AmbiguousMatch | NotFound:
    """Highest lexicon-hit count wins; confidence is its share of all hits."""
    hits = category_hits(text, categories)
    total = sum(hits.values())
    if total == 0:
        return NotFound()
    top = max(hits.values())
    winners = [c for c in categories if hits[c.id] == top]
    if len(winners) > 1:
        return AmbiguousMatch(tuple(winners))
    return Match(winners[0], top / total)


def score_confidence(resident_conf: float, category_conf: float, time_resolved: bool = True) -> float:
    """Geometric mean of the two confidences, halved for an unresolved time."""
    for value in (resident_conf, category_conf):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"confidence {value} outside [0, 1]")
    base = math.sqrt(resident_conf * category_conf)
    return base if time_resolved else 0.5 * base


# ---------------------------------------------------------------------------
# composition


class RuleBasedParser:
    """Deterministic baseline implementation of :class:`ParserAdapter`."""

    def __init__(self, settings: ParserSettings | None = None):
        self.settings = settings or ParserSettings()

    def parse(
        self,
        transcript: Transcript,
        registries: Registries,
        overrides: Mapping[str, Any] | None = None,
    ) -> ParseOutcome:
        s = self.settings
        overrides = overrides or {}
        text = transcript.text
        tid = transcript.id

        if overrides.get("resident_id"):
            resident = registries.resident(overrides["resident_id"])
            res = Match(resident, 1.0) if resident else NotFound()
        else:
            res = match_resident(text, registries.residents, s.fuzzy_threshold, s.tie_tolerance)
        if isinstance(res, AmbiguousMatch):
            names = ", ".join(f"{r.full_name} ({r.id})" for r in res.candidates)
            return _clarify("resident", tuple(r.id for r in res.candidates),
                            f"Which resident do you mean: {names}?", tid)
        if isinstance(res, NotFound):
            return _clarify("resident", (), "Which resident is this about?", tid)

        if overrides.get("category_id"):
            category = registries.category(overrides["category_id"])
            cat = Match(category, 1.0) if category else NotFound()
        else:
            cat = classify_category(text, registries.categories)
        if isinstance(cat, AmbiguousMatch):
            labels = ", ".join(f"{c.label} ({c.id})" for c in cat.candidates)
            return _clarify("category", tuple(c.id for c in cat.candidates),
                            f"Which care category applies: {labels}?", tid)
        if isinstance(cat, NotFound):
            return _clarify("category", tuple(c.id for c in registries.categories),
                            "Which care category does this note belong to?", tid)

        record_conf = score_confidence(res.confidence, cat.confidence, True)
        if record_conf < s.gate_threshold:
            if res.confidence <= cat.confidence:
                return _clarify("resident", (res.item.id,),
                                f"Did you mean {res.item.full_name} ({res.item.id})?", tid)
            return _clarify("category", (cat.item.id,),
                            f"Is this about {cat.item.label} ({cat.item.id})?", tid)

        found = extract_reminder(text, transcript.spoken_at, s.time)
        note = remove_sentence(text, found.sentence) if found else text.strip()
        record = validate_record(
            {
                "record_id": f"{tid}:rec",
                "resident_id": res.item.id,
                "category_id": cat.item.id,
                "timestamp": transcript.spoken_at,
                "note": note,
                "source_transcript": tid,
                "parser_confidence": record_conf,
            },
            registries,
        )

        intent = None
        if found is not None:
            schedule: ScheduleSpec = found.schedule
            if overrides.get("schedule") is not None:
                schedule = overrides["schedule"]
                if isinstance(schedule, Mapping):
                    schedule = schedule_from_dict(schedule)
            time_ok = not isinstance(schedule, Ambiguous)
            intent = ReminderIntent(
                intent_id=f"{tid}:rem",
                source_transcript=tid,
                resident_id=res.item.id,
                category_id=cat.item.id,
                description=found.description,
                schedule=schedule,
                confidence=score_confidence(res.confidence, cat.confidence, time_ok),
                created_at=transcript.spoken_at,
            )
        return ParseOutcome(PARSED, record=record, reminder=intent)


def _clarify(field_name: str, candidates: tuple[str, ...], prompt: str, tid: str) -> ParseOutcome:
    return ParseOutcome(
        CLARIFICATION_NEEDED,
        clarification=ClarificationRequest(field_name, candidates, prompt, tid, f"{tid}:clarify:{field_name}"),
    )


def outcome_summary(outcome: ParseOutcome) -> str:
    if outcome.disposition == CLARIFICATION_NEEDED:
        return f"clarify {outcome.clarification.field}"
    fields = outcome.record_fields or {}
    parts = [fields.get("resident_id", "?"), fields.get("category_id", "?")]
    if outcome.reminder is not None:
        spec = outcome.reminder.schedule
        parts.append("reminder:" + (format_timestamp(spec.fire_at) if hasattr(spec, "fire_at") else type(spec).__name__))
    return " ".join(str(p) for p in parts)
