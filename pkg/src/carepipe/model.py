"""Shared domain types, registries, corpus I/O and record validation."""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Union

from .text import normalize

UTC = timezone.utc


class CarepipeError(Exception):
    """Base class for errors raised by this package."""


# ---------------------------------------------------------------------------
# timestamps


def parse_timestamp(value: str | datetime) -> datetime:
    """Parse an ISO-8601 UTC timestamp at second resolution.

    Accepts a trailing ``Z`` or an explicit offset (converted to UTC). Naive
    values and sub-second precision are rejected.
    """
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, str):
        text = value.strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise ValueError(f"invalid timestamp {value!r}") from exc
    else:
        raise ValueError(f"invalid timestamp {value!r}")
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    if dt.microsecond:
        raise ValueError(f"timestamp {value!r} is finer than one second")
    return dt.astimezone(UTC)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# registries


@dataclass(frozen=True)
class Resident:
    id: str
    full_name: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("resident id is empty")
        if not self.full_name.strip():
            raise ValueError(f"resident {self.id}: full_name is empty")
        if len(set(self.aliases)) != len(self.aliases):
            raise ValueError(f"resident {self.id}: duplicate aliases")

    @property
    def names(self) -> tuple[str, ...]:
        return (self.full_name, *self.aliases)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "full_name": self.full_name, "aliases": list(self.aliases)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Resident":
        return cls(str(d["id"]), str(d["full_name"]), tuple(d.get("aliases") or ()))


@dataclass(frozen=True)
class CareCategory:
    id: str
    label: str
    lexicon: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("category id is empty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "label": self.label, "lexicon": list(self.lexicon)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CareCategory":
        return cls(str(d["id"]), str(d["label"]), tuple(d.get("lexicon") or ()))


class RegistryError(CarepipeError):
    pass


@dataclass(frozen=True)
class Registries:
    """Read-only resident registry and care-category taxonomy."""

    residents: tuple[Resident, ...]
    categories: tuple[CareCategory, ...]
    _resident_index: dict[str, Resident] = field(init=False, repr=False, compare=False)
    _category_index: dict[str, CareCategory] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        r_index = {r.id: r for r in self.residents}
        if len(r_index) != len(self.residents):
            raise RegistryError("duplicate resident id")
        c_index = {c.id: c for c in self.categories}
        if len(c_index) != len(self.categories):
            raise RegistryError("duplicate category id")
        owner: dict[str, str] = {}
        for cat in self.categories:
            for phrase in cat.lexicon:
                key = normalize(phrase).strip()
                if not key:
                    raise RegistryError(f"category {cat.id}: empty lexicon entry")
                if key in owner and owner[key] != cat.id:
                    raise RegistryError(
                        f"lexicon entry {phrase!r} shared by {owner[key]} and {cat.id}"
                    )
                owner[key] = cat.id
        object.__setattr__(self, "_resident_index", r_index)
        object.__setattr__(self, "_category_index", c_index)

    def resident(self, resident_id: str) -> Resident | None:
        return self._resident_index.get(resident_id)

    def category(self, category_id: str) -> CareCategory | None:
        return self._category_index.get(category_id)

    def has_resident(self, resident_id: object) -> bool:
        return isinstance(resident_id, str) and resident_id in self._resident_index

    def has_category(self, category_id: object) -> bool:
        return isinstance(category_id, str) and category_id in self._category_index


# ---------------------------------------------------------------------------
# transcripts


@dataclass(frozen=True)
class GroundTruth:
    resident_id: str
    category_id: str
    note: str
    reminder: bool = False
    reminder_description: str | None = None
    expected_event_count: int | None = None

    def __post_init__(self) -> None:
        if not self.reminder and (
            self.reminder_description is not None or self.expected_event_count is not None
        ):
            raise ValueError("non-reminder truth carries reminder fields")
        if self.expected_event_count is not None and self.expected_event_count < 0:
            raise ValueError("expected_event_count is negative")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "resident_id": self.resident_id,
            "category_id": self.category_id,
            "note": self.note,
            "reminder": self.reminder,
        }
        if self.reminder_description is not None:
            d["reminder_description"] = self.reminder_description
        if self.expected_event_count is not None:
            d["expected_event_count"] = self.expected_event_count
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        count = d.get("expected_event_count")
        if count is not None and (isinstance(count, bool) or not isinstance(count, int)):
            raise ValueError("expected_event_count must be an integer")
        reminder = d.get("reminder", False)
        if not isinstance(reminder, bool):
            raise ValueError("reminder must be a boolean")
        return cls(
            resident_id=str(d["resident_id"]),
            category_id=str(d["category_id"]),
            note=str(d["note"]),
            reminder=reminder,
            reminder_description=d.get("reminder_description"),
            expected_event_count=count,
        )


@dataclass(frozen=True)
class Transcript:
    """One spoken interaction, optionally annotated for replay.

    ``tags`` is an optional corpus extension naming adversarial item kinds
    (``reminder_trap``, ``ambiguous_resident``, ``underspecified_time``).
    """

    id: str
    text: str
    spoken_at: datetime
    truth: GroundTruth | None = None
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("transcript id is empty")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError(f"transcript {self.id}: text is empty")

    @property
    def adversarial(self) -> bool:
        return bool(self.tags)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "id": self.id,
            "text": self.text,
            "spoken_at": format_timestamp(self.spoken_at),
        }
        if self.truth is not None:
            d["truth"] = self.truth.to_dict()
        if self.tags:
            d["tags"] = list(self.tags)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Transcript":
        truth = d.get("truth")
        return cls(
            id=d["id"],
            text=d["text"],
            spoken_at=parse_timestamp(d["spoken_at"]),
            truth=GroundTruth.from_dict(truth) if truth is not None else None,
            tags=tuple(d.get("tags") or ()),
        )


# ---------------------------------------------------------------------------
# records, reminders, events


@dataclass(frozen=True)
class CareRecord:
    """A structured care entry. Build these through :func:`validate_record`."""

    record_id: str
    resident_id: str
    category_id: str
    timestamp: datetime
    note: str
    source_transcript: str
    parser_confidence: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "resident_id": self.resident_id,
            "category_id": self.category_id,
            "timestamp": format_timestamp(self.timestamp),
            "note": self.note,
            "source_transcript": self.source_transcript,
            "parser_confidence": self.parser_confidence,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CareRecord":
        return cls(
            record_id=d["record_id"],
            resident_id=d["resident_id"],
            category_id=d["category_id"],
            timestamp=parse_timestamp(d["timestamp"]),
            note=d["note"],
            source_transcript=d["source_transcript"],
            parser_confidence=float(d["parser_confidence"]),
        )


@dataclass(frozen=True)
class OneShot:
    fire_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "one_shot", "fire_at": format_timestamp(self.fire_at)}


@dataclass(frozen=True)
class Recurring:
    """Daily recurrence: ``count`` firings, the first at ``first_fire``."""

    first_fire: datetime
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("recurrence count must be at least 1")

    @property
    def time_of_day(self) -> tuple[int, int]:
        return self.first_fire.hour, self.first_fire.minute

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "recurring", "first_fire": format_timestamp(self.first_fire), "count": self.count}


@dataclass(frozen=True)
class Ambiguous:
    reason: str = "underspecified time"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "ambiguous", "reason": self.reason}


ScheduleSpec = Union[OneShot, Recurring, Ambiguous]


def schedule_from_dict(d: Mapping[str, Any]) -> ScheduleSpec:
    kind = d.get("kind")
    if kind == "one_shot":
        return OneShot(parse_timestamp(d["fire_at"]))
    if kind == "recurring":
        return Recurring(parse_timestamp(d["first_fire"]), int(d["count"]))
    if kind == "ambiguous":
        return Ambiguous(d.get("reason", "underspecified time"))
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class ReminderIntent:
    intent_id: str
    source_transcript: str
    resident_id: str
    category_id: str
    description: str
    schedule: ScheduleSpec
    confidence: float
    created_at: datetime

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("reminder description is empty")

    @property
    def schedulable(self) -> bool:
        return not isinstance(self.schedule, Ambiguous)

    def to_dict(self) -> dict[str, Any]:
        return {
            "intent_id": self.intent_id,
            "source_transcript": self.source_transcript,
            "resident_id": self.resident_id,
            "category_id": self.category_id,
            "description": self.description,
            "schedule": self.schedule.to_dict(),
            "confidence": self.confidence,
            "created_at": format_timestamp(self.created_at),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReminderIntent":
        return cls(
            intent_id=d["intent_id"],
            source_transcript=d["source_transcript"],
            resident_id=d["resident_id"],
            category_id=d["category_id"],
            description=d["description"],
            schedule=schedule_from_dict(d["schedule"]),
            confidence=float(d["confidence"]),
            created_at=parse_timestamp(d["created_at"]),
        )


class EventStatus(str, enum.Enum):
    PENDING = "pending"
    FIRED = "fired"
    CONFIRMED = "confirmed"
    CANCELLED = "cancelled"


LEGAL_TRANSITIONS = {
    EventStatus.PENDING: {EventStatus.FIRED, EventStatus.CANCELLED},
    EventStatus.FIRED: {EventStatus.CONFIRMED},
    EventStatus.CONFIRMED: set(),
    EventStatus.CANCELLED: set(),
}


@dataclass(frozen=True)
class ScheduledEvent:
    event_id: str
    intent_id: str
    fire_at: datetime
    summary: str
    status: EventStatus = EventStatus.PENDING
    created_at: datetime | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "event_id": self.event_id,
            "intent_id": self.intent_id,
            "fire_at": format_timestamp(self.fire_at),
            "summary": self.summary,
            "status": self.status.value,
        }
        if self.created_at is not None:
            d["created_at"] = format_timestamp(self.created_at)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScheduledEvent":
        created = d.get("created_at")
        return cls(
            event_id=d["event_id"],
            intent_id=d["intent_id"],
            fire_at=parse_timestamp(d["fire_at"]),
            summary=d["summary"],
            status=EventStatus(d.get("status", "pending")),
            created_at=parse_timestamp(created) if created else None,
        )


class Disposition(str, enum.Enum):
    COMPLETED = "completed"
    CLARIFICATION_REQUESTED = "clarification_requested"
    REJECTED = "rejected"


STAGES = ("parse", "validate", "insert", "schedule")


@dataclass(frozen=True)
class StageEntry:
    stage: str
    success: bool
    epsilon: float | None
    latency_ms: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "success": self.success,
            "epsilon": self.epsilon,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StageEntry":
        eps = d.get("epsilon")
        return cls(d["stage"], bool(d["success"]), None if eps is None else float(eps), float(d["latency_ms"]))


@dataclass(frozen=True)
class PipelineOutcome:
    transcript_id: str
    stages: tuple[StageEntry, ...]
    disposition: Disposition
    detail: str = ""

    def __post_init__(self) -> None:
        order = [STAGES.index(s.stage) for s in self.stages]
        if order != sorted(order) or len(set(order)) != len(order):
            raise ValueError(f"stages out of pipeline order: {[s.stage for s in self.stages]}")
        if any(s.latency_ms < 0 for s in self.stages):
            raise ValueError("negative stage latency")

    @property
    def total_error(self) -> float | None:
        eps = [s.epsilon for s in self.stages if s.epsilon is not None]
        return math.fsum(eps) if eps else None

    @property
    def total_latency_ms(self) -> float:
        return math.fsum(s.latency_ms for s in self.stages)

    def stage(self, name: str) -> StageEntry | None:
        for s in self.stages:
            if s.stage == name:
                return s
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "transcript_id": self.transcript_id,
            "stages": [s.to_dict() for s in self.stages],
            "disposition": self.disposition.value,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PipelineOutcome":
        return cls(
            d["transcript_id"],
            tuple(StageEntry.from_dict(s) for s in d["stages"]),
            Disposition(d["disposition"]),
            d.get("detail", ""),
        )


# ---------------------------------------------------------------------------
# validation


REQUIRED_RECORD_FIELDS = (
    "record_id",
    "resident_id",
    "category_id",
    "timestamp",
    "note",
    "source_transcript",
    "parser_confidence",
)


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str = ""


class ValidationError(CarepipeError):
    """Every violated field of a candidate record, not just the first."""

    def __init__(self, violations: Iterable[Violation]):
        self.violations = tuple(violations)
        super().__init__("; ".join(f"{v.code}: {v.field}" for v in self.violations))

    @property
    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def fields(self, code: str | None = None) -> set[str]:
        return {v.field for v in self.violations if code is None or v.code == code}


def validate_record(candidate: Any, registries: Registries) -> CareRecord:
    """Return a :class:`CareRecord` or raise :class:`ValidationError`.

    Never raises anything else, whatever ``candidate`` is.
    """
    if isinstance(candidate, CareRecord):
        candidate = candidate.to_dict()
    if not isinstance(candidate, Mapping):
        raise ValidationError(Violation("MissingField", f) for f in REQUIRED_RECORD_FIELDS)

    problems: list[Violation] = []
    values: dict[str, Any] = {}
    for name in REQUIRED_RECORD_FIELDS:
        value = candidate.get(name)
        if value is None or (isinstance(value, str) and not value.strip() and name != "note"):
            problems.append(Violation("MissingField", name))
            continue
        values[name] = value

    for name in ("record_id", "source_transcript", "resident_id", "category_id"):
        if name in values and not isinstance(values[name], str):
            problems.append(Violation("InvalidField", name, "expected a string"))
            del values[name]

    if "resident_id" in values and not registries.has_resident(values["resident_id"]):
        problems.append(Violation("UnknownResident", "resident_id", str(values["resident_id"])))
    if "category_id" in values and not registries.has_category(values["category_id"]):
        problems.append(Violation("UnknownCategory", "category_id", str(values["category_id"])))

    if "note" in values:
        note = values["note"]
        if not isinstance(note, str):
            problems.append(Violation("InvalidField", "note", "expected a string"))
        elif not note.strip():
            problems.append(Violation("EmptyNote", "note"))

    if "timestamp" in values:
        try:
            values["timestamp"] = parse_timestamp(values["timestamp"])
        except (ValueError, TypeError, OverflowError) as exc:
            problems.append(Violation("InvalidField", "timestamp", str(exc)))

    if "parser_confidence" in values:
        conf = values["parser_confidence"]
        if isinstance(conf, bool) or not isinstance(conf, (int, float)):
            problems.append(Violation("InvalidField", "parser_confidence", "expected a number"))
        elif not (0.0 <= conf <= 1.0):
            problems.append(Violation("ConfidenceOutOfRange", "parser_confidence", repr(conf)))

    if problems:
        raise ValidationError(problems)
    return CareRecord(
        record_id=values["record_id"],
        resident_id=values["resident_id"],
        category_id=values["category_id"],
        timestamp=values["timestamp"],
        note=values["note"],
        source_transcript=values["source_transcript"],
        parser_confidence=float(values["parser_confidence"]),
    )


# ---------------------------------------------------------------------------
# corpus files


class CorpusError(CarepipeError):
    pass


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class DuplicateId(CorpusError):
    def __init__(self, item_id: str, line_no: int | None = None):
        self.item_id = item_id
        self.line_no = line_no
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate id {item_id!r}{where}")


def iter_jsonl(path: str | Path) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, f"not valid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "expected an object")
            yield line_no, obj


def dump_jsonl(objects: Iterable[Mapping[str, Any]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def _load_items(path: str | Path, factory) -> list:
    items, seen = [], set()
    for line_no, obj in iter_jsonl(path):
        try:
            item = factory(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(line_no, str(exc) or type(exc).__name__) from exc
        if item.id in seen:
            raise DuplicateId(item.id, line_no)
        seen.add(item.id)
        items.append(item)
    return items


def load_transcripts(path: str | Path) -> list[Transcript]:
    return _load_items(path, Transcript.from_dict)


def load_registries(residents_path: str | Path, categories_path: str | Path) -> Registries:
    residents = _load_items(residents_path, Resident.from_dict)
    categories = _load_items(categories_path, CareCategory.from_dict)
    return Registries(tuple(residents), tuple(categories))


def data_path(name: str) -> Path:
    return Path(str(resources.files("carepipe") / "data" / name))


def default_registries() -> Registries:
    return load_registries(data_path("residents.jsonl"), data_path("categories.jsonl"))


@dataclass(frozen=True)
class Corpus:
    transcripts: tuple[Transcript, ...]
    registries: Registries

    def __len__(self) -> int:
        return len(self.transcripts)


def load_corpus(
    path: str | Path,
    residents_path: str | Path | None = None,
    categories_path: str | Path | None = None,
) -> Corpus:
    """Load transcripts plus registries (the bundled ones unless given)."""
    transcripts = load_transcripts(path)
    if residents_path is None and categories_path is None:
        registries = default_registries()
    else:
        registries = load_registries(
            residents_path or data_path("residents.jsonl"),
            categories_path or data_path("categories.jsonl"),
        )
    return Corpus(tuple(transcripts), registries)


def save_transcripts(transcripts: Iterable[Transcript], path: str | Path) -> None:
    dump_jsonl((t.to_dict() for t in transcripts), path)


def bundled_corpus() -> Corpus:
    return load_corpus(data_path("corpus.jsonl"))
