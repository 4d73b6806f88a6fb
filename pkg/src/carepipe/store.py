"""Append-only, audit-traced persistence.

Everything lives in one line-delimited JSON file. Each line is an object with
a ``type`` tag (``record``, ``intent``, ``event``, ``event_status``,
``request``, ``request_resolved``, ``outcome``, ``audit``). A mutation and its
audit entry are written with a single ``write`` call, and reopening a store
replays the file into the same in-memory state. Nothing is ever deleted:
cancelling an event appends a status line.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any

from .model import (
    LEGAL_TRANSITIONS,
    UTC,
    CarepipeError,
    CareRecord,
    EventStatus,
    PipelineOutcome,
    ReminderIntent,
    ScheduledEvent,
    format_timestamp,
    parse_timestamp,
)

log = logging.getLogger(__name__)

AUDIT_ACTIONS = ("insert", "schedule", "fire", "confirm", "cancel", "reject")


class StoreError(CarepipeError):
    pass


class DuplicateRecordId(StoreError):
    pass


class StorageUnavailable(StoreError):
    pass


class UnknownId(StoreError):
    pass


class InvalidTransition(StoreError):
    pass


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    at: datetime
    actor: str
    action: str
    subject_id: str
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "at": format_timestamp(self.at),
            "actor": self.actor,
            "action": self.action,
            "subject_id": self.subject_id,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AuditEntry":
        return cls(int(d["seq"]), parse_timestamp(d["at"]), d["actor"], d["action"], d["subject_id"], d.get("detail", ""))


def _now() -> datetime:
    return datetime.now(UTC).replace(microsecond=0)


class Store:
    """Single-writer store; reads see immutable snapshots.

    ``path=None`` keeps everything in memory, which is what replays and tests
    use by default.
    """

    def __init__(self, path: str | Path | None = None, clock: Callable[[], datetime] | None = None):
        self.path = Path(path) if path is not None else None
        self.clock = clock or _now
        self._lock = threading.Lock()
        self._closed = False
        self._records: dict[str, CareRecord] = {}
        self._intents: dict[str, ReminderIntent] = {}
        self._events: dict[str, ScheduledEvent] = {}
        self._requests: dict[str, dict[str, Any]] = {}
        self._outcomes: dict[str, PipelineOutcome] = {}
        self._audit: list[AuditEntry] = []
        self._fh = None
        if self.path is not None:
            self._replay_file()
            self._fh = open(self.path, "a", encoding="utf-8", newline="\n")

    # -- lifecycle ---------------------------------------------------------

    def _replay_file(self) -> None:
        if not self.path.exists():
            self.path.touch()
            return
        raw = self.path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            # torn final write: terminate it so later appends start clean
            with open(self.path, "ab") as fh:
                fh.write(b"\n")
        for line_no, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), 1):
            if not line.strip():
                continue
            try:
                self._apply(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping unreadable line (%s)", self.path, line_no, exc)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            self._closed = True

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def closed(self) -> bool:
        return self._closed

    # -- low level ---------------------------------------------------------

    def _apply(self, obj: dict[str, Any]) -> None:
        kind = obj["type"]
        if kind == "record":
            rec = CareRecord.from_dict(obj["data"])
            self._records[rec.record_id] = rec
        elif kind == "intent":
            intent = ReminderIntent.from_dict(obj["data"])
            self._intents[intent.intent_id] = intent
        elif kind == "event":
            ev = ScheduledEvent.from_dict(obj["data"])
            self._events[ev.event_id] = ev
        elif kind == "event_status":
            ev = self._events[obj["event_id"]]
            self._events[ev.event_id] = _with_status(ev, EventStatus(obj["status"]))
        elif kind == "request":
            self._requests[obj["data"]["request_id"]] = dict(obj["data"], resolution=None)
        elif kind == "request_resolved":
            self._requests[obj["request_id"]]["resolution"] = obj["resolution"]
        elif kind == "outcome":
            out = PipelineOutcome.from_dict(obj["data"])
            self._outcomes[out.transcript_id] = out
        elif kind == "audit":
            self._audit.append(AuditEntry.from_dict(obj["data"]))
        else:
            raise ValueError(f"unknown line type {kind!r}")

    def _commit(self, objects: Iterable[dict[str, Any]]) -> None:
        """Apply and persist ``objects`` together. Caller holds the lock."""
        if self._closed:
            raise StorageUnavailable("store is closed")
        objects = list(objects)
        payload = "".join(json.dumps(o, ensure_ascii=False, sort_keys=True) + "\n" for o in objects)
        if self._fh is not None:
            try:
                self._fh.write(payload)
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageUnavailable(str(exc)) from exc
        for obj in objects:
            self._apply(obj)

    def _audit_line(self, actor: str, action: str, subject_id: str, detail: str, at: datetime | None, offset: int = 0) -> dict[str, Any]:
        if action not in AUDIT_ACTIONS:
            raise ValueError(f"unknown audit action {action!r}")
        entry = AuditEntry(len(self._audit) + 1 + offset, at or self.clock(), actor, action, subject_id, detail)
        return {"type": "audit", "data": entry.to_dict()}

    # -- writes --------------------------------------------------------------

    def insert_record(self, record: CareRecord, actor: str = "insert", at: datetime | None = None) -> str:
        with self._lock:
            if self._closed:
                raise StorageUnavailable("store is closed")
            if record.record_id in self._records:
                raise DuplicateRecordId(record.record_id)
            self._commit([
                {"type": "record", "data": record.to_dict()},
                self._audit_line(actor, "insert", record.record_id, f"resident={record.resident_id} category={record.category_id}", at),
            ])
        return record.record_id

    def insert_intent(self, intent: ReminderIntent, actor: str = "parse", at: datetime | None = None) -> str:
        with self._lock:
            if intent.intent_id in self._intents:
                raise DuplicateRecordId(intent.intent_id)
            self._commit([
                {"type": "intent", "data": intent.to_dict()},
                self._audit_line(actor, "insert", intent.intent_id, f"schedule={intent.schedule.to_dict()['kind']}", at),
            ])
        return intent.intent_id

    def add_events(self, events: Iterable[ScheduledEvent], actor: str = "scheduler", at: datetime | None = None, detail: str = "") -> None:
        events = list(events)
        with self._lock:
            lines = []
            for i, ev in enumerate(events):
                if ev.event_id in self._events:
                    raise DuplicateRecordId(ev.event_id)
                if ev.intent_id not in self._intents:
                    raise UnknownId(ev.intent_id)
                lines.append({"type": "event", "data": ev.to_dict()})
                lines.append(self._audit_line(actor, "schedule", ev.event_id, detail or f"intent={ev.intent_id} fire_at={format_timestamp(ev.fire_at)}", at, offset=i))
            self._commit(lines)

    def set_event_status(self, event_id: str, status: EventStatus, action: str, actor: str = "scheduler", at: datetime | None = None, detail: str = "") -> ScheduledEvent:
        with self._lock:
            ev = self._events.get(event_id)
            if ev is None:
                raise UnknownId(event_id)
            if status not in LEGAL_TRANSITIONS[ev.status]:
                raise InvalidTransition(f"{event_id}: {ev.status.value} -> {status.value}")
            self._commit([
                {"type": "event_status", "event_id": event_id, "status": status.value},
                self._audit_line(actor, action, event_id, detail or f"{ev.status.value}->{status.value}", at),
            ])
            return self._events[event_id]

    def add_request(self, request: dict[str, Any], actor: str = "scheduler", at: datetime | None = None) -> None:
        """Persist a pending clarification/confirmation request (audited as ``reject``)."""
        with self._lock:
            rid = request["request_id"]
            if rid in self._requests:
                raise DuplicateRecordId(rid)
            self._commit([
                {"type": "request", "data": request},
                self._audit_line(actor, "reject", request.get("intent_id", rid), f"held for {request['field']}: {request.get('prompt', '')}", at),
            ])

    def resolve_request(self, request_id: str, resolution: str, action: str, actor: str = "operator", at: datetime | None = None, detail: str = "") -> None:
        with self._lock:
            req = self._requests.get(request_id)
            if req is None:
                raise UnknownId(request_id)
            if req["resolution"] is not None:
                raise InvalidTransition(f"request {request_id} already {req['resolution']}")
            self._commit([
                {"type": "request_resolved", "request_id": request_id, "resolution": resolution},
                self._audit_line(actor, action, req.get("intent_id", request_id), detail or f"request {request_id}: {resolution}", at),
            ])

    def audit(self, actor: str, action: str, subject_id: str, detail: str = "", at: datetime | None = None) -> None:
        with self._lock:
            self._commit([self._audit_line(actor, action, subject_id, detail, at)])

    def record_outcome(self, outcome: PipelineOutcome) -> None:
        with self._lock:
            self._commit([{"type": "outcome", "data": outcome.to_dict()}])

    # -- reads ---------------------------------------------------------------

    def _check_open(self) -> None:
        if self._closed:
            raise StorageUnavailable("store is closed")

    def get_record(self, record_id: str) -> CareRecord | None:
        return self._records.get(record_id)

    def records(self) -> list[CareRecord]:
        return sorted(self._records.values(), key=lambda r: (r.timestamp, r.record_id))

    def query_records(
        self,
        resident_id: str | None = None,
        category_id: str | None = None,
        start: datetime | None = None,
        end: datetime | None = None,
    ) -> list[CareRecord]:
        """Records matching every given filter; the time range is ``[start, end)``."""
        self._check_open()
        out = [
            r for r in self._records.values()
            if (resident_id is None or r.resident_id == resident_id)
            and (category_id is None or r.category_id == category_id)
            and (start is None or r.timestamp >= start)
            and (end is None or r.timestamp < end)
        ]
        return sorted(out, key=lambda r: (r.timestamp, r.record_id))

    def intent(self, intent_id: str) -> ReminderIntent | None:
        return self._intents.get(intent_id)

    def intents(self) -> list[ReminderIntent]:
        return [self._intents[k] for k in sorted(self._intents)]

    def event(self, event_id: str) -> ScheduledEvent | None:
        return self._events.get(event_id)

    def events(self, intent_id: str | None = None) -> list[ScheduledEvent]:
        evs = [e for e in self._events.values() if intent_id is None or e.intent_id == intent_id]
        return sorted(evs, key=lambda e: (e.fire_at, e.event_id))

    def request(self, request_id: str) -> dict[str, Any] | None:
        req = self._requests.get(request_id)
        return dict(req) if req is not None else None

    def requests(self, pending_only: bool = False) -> list[dict[str, Any]]:
        return [dict(r) for k, r in sorted(self._requests.items()) if not pending_only or r["resolution"] is None]

    def outcomes(self) -> list[PipelineOutcome]:
        return [self._outcomes[k] for k in sorted(self._outcomes)]

    def audit_log(self, subject_id: str | None = None) -> list[AuditEntry]:
        self._check_open()
        return [a for a in self._audit if subject_id is None or a.subject_id == subject_id]

    def snapshot(self) -> dict[str, Any]:
        """Plain-data view of the whole state, for equality checks."""
        return {
            "records": {k: v.to_dict() for k, v in sorted(self._records.items())},
            "intents": {k: v.to_dict() for k, v in sorted(self._intents.items())},
            "events": {k: v.to_dict() for k, v in sorted(self._events.items())},
            "requests": {k: dict(v) for k, v in sorted(self._requests.items())},
            "outcomes": {k: v.to_dict() for k, v in sorted(self._outcomes.items())},
            "audit": [a.to_dict() for a in self._audit],
        }


def _with_status(ev: ScheduledEvent, status: EventStatus) -> ScheduledEvent:
    return ScheduledEvent(ev.event_id, ev.intent_id, ev.fire_at, ev.summary, status, ev.created_at)
