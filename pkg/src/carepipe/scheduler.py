"""Reminder scheduling with clarification and confirmation gates.

An intent becomes calendar events only when its time is resolved, lies in
the future and its confidence clears the gate. Otherwise the scheduler
returns a request for a human and records it in the store. All state lives in
the :class:`~carepipe.store.Store`, so a scheduler can be rebuilt from a file.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Union

from .metrics import ProportionEstimate, wilson_interval
from .model import (
    Ambiguous,
    EventStatus,
    OneShot,
    Recurring,
    ReminderIntent,
    ScheduledEvent,
    ScheduleSpec,
    format_timestamp,
    parse_timestamp,
)
from .parser import ClarificationRequest
from .store import InvalidTransition, Store, UnknownId


class VirtualClock:
    """Harness-controlled time that only moves forward."""

    def __init__(self, now: datetime):
        self._now = now

    @property
    def now(self) -> datetime:
        return self._now

    def advance_to(self, when: datetime) -> datetime:
        if when < self._now:
            raise ValueError(f"clock cannot move backwards ({format_timestamp(when)} < {format_timestamp(self._now)})")
        self._now = when
        return self._now

    def advance(self, delta: timedelta) -> datetime:
        return self.advance_to(self._now + delta)

    def __call__(self) -> datetime:
        return self._now


@dataclass(frozen=True)
class ConfirmationRequest:
    request_id: str
    intent_id: str
    fire_times: tuple[datetime, ...]
    prompt: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "intent_id": self.intent_id,
            "field": "confirmation",
            "fire_times": [format_timestamp(t) for t in self.fire_times],
            "prompt": self.prompt,
        }


ScheduleResult = Union[list[ScheduledEvent], ClarificationRequest, ConfirmationRequest]


def expand(spec: ScheduleSpec, max_horizon_days: int = 31) -> list[datetime]:
    """Concrete firing times of a resolved schedule."""
    if isinstance(spec, OneShot):
        return [spec.fire_at]
    if isinstance(spec, Recurring):
        if spec.count > max_horizon_days:
            raise ValueError(f"recurrence of {spec.count} days exceeds {max_horizon_days}")
        return [spec.first_fire + timedelta(days=k) for k in range(spec.count)]
    raise ValueError("an ambiguous schedule has no firing times")


class Scheduler:
    def __init__(
        self,
        store: Store,
        gate_threshold: float = 0.7,
        confirm_on_fire: bool = False,
        max_horizon_days: int = 31,
    ):
        self.store = store
        self.gate_threshold = gate_threshold
        self.confirm_on_fire = confirm_on_fire
        self.max_horizon_days = max_horizon_days

    # -- scheduling ----------------------------------------------------------

    def schedule(self, intent: ReminderIntent, now: datetime | None = None) -> ScheduleResult:
        now = now or intent.created_at
        if self.store.intent(intent.intent_id) is None:
            self.store.insert_intent(intent, actor="scheduler", at=now)

        if isinstance(intent.schedule, Ambiguous):
            return self._hold_for_time(intent, now, f"When should I remind you to {intent.description}? ({intent.schedule.reason})")
        times = expand(intent.schedule, self.max_horizon_days)
        if min(times) <= now:
            return self._hold_for_time(intent, now, f"That time has already passed. When should I remind you to {intent.description}?")

        if intent.confidence < self.gate_threshold:
            request = ConfirmationRequest(
                f"{intent.intent_id}:confirm",
                intent.intent_id,
                tuple(times),
                f"Please confirm: {intent.description} at "
                + ", ".join(format_timestamp(t) for t in times)
                + f" (confidence {intent.confidence:.2f})",
            )
            self.store.add_request(request.to_dict(), at=now)
            return request
        return self._materialize(intent, times, now)

    def _hold_for_time(self, intent: ReminderIntent, now: datetime, prompt: str) -> ClarificationRequest:
        base = f"{intent.intent_id}:clarify:time"
        n = sum(1 for r in self.store.requests() if r["request_id"].startswith(base))
        request = ClarificationRequest("time", (), prompt, intent.intent_id, base if n == 0 else f"{base}:{n + 1}")
        self.store.add_request(dict(request.to_dict(), intent_id=intent.intent_id), at=now)
        return request

    def _materialize(self, intent: ReminderIntent, times: list[datetime], now: datetime) -> list[ScheduledEvent]:
        existing = len(self.store.events(intent.intent_id))
        events = [
            ScheduledEvent(f"{intent.intent_id}:ev{existing + k + 1}", intent.intent_id, t, intent.description, EventStatus.PENDING, now)
            for k, t in enumerate(sorted(times))
        ]
        self.store.add_events(events, at=now)
        return events

    # -- human decisions -----------------------------------------------------

    def clarify(self, request_id: str, schedule: ScheduleSpec | datetime | str, now: datetime) -> ScheduleResult:
        """Resolve a time clarification with a staff-supplied schedule.

        A human answer counts as confirmed, so the confidence gate is skipped.
        """
        req = self.store.request(request_id)
        if req is None:
            raise UnknownId(request_id)
        if req["field"] != "time" or req["resolution"] is not None:
            raise InvalidTransition(f"request {request_id} is not an open time clarification")
        if isinstance(schedule, str):
            schedule = parse_timestamp(schedule)
        if isinstance(schedule, datetime):
            schedule = OneShot(schedule)
        intent = self.store.intent(req["intent_id"])
        if isinstance(schedule, Ambiguous):
            raise ValueError("a clarification answer must be a resolved schedule")
        times = expand(schedule, self.max_horizon_days)
        self.store.resolve_request(request_id, "clarified", "confirm", at=now, detail=f"clarified schedule={schedule.to_dict()}")
        if min(times) <= now:
            return self._hold_for_time(intent, now, f"That time has already passed. When should I remind you to {intent.description}?")
        return self._materialize(intent, times, now)

    def confirm(self, target_id: str, decision: str, now: datetime) -> ScheduleResult | ScheduledEvent | None:
        """Apply an approve/reject decision to a request or an event."""
        if decision not in ("approve", "reject"):
            raise ValueError(f"decision must be approve or reject, not {decision!r}")
        req = self.store.request(target_id)
        if req is not None:
            if req["field"] != "confirmation" or req["resolution"] is not None:
                raise InvalidTransition(f"request {target_id} is not awaiting confirmation")
            if decision == "reject":
                self.store.resolve_request(target_id, "rejected", "cancel", at=now)
                return None
            self.store.resolve_request(target_id, "approved", "confirm", at=now)
            intent = self.store.intent(req["intent_id"])
            return self._materialize(intent, [parse_timestamp(t) for t in req["fire_times"]], now)

        event = self.store.event(target_id)
        if event is None:
            raise UnknownId(target_id)
        if decision == "approve":
            if event.status is not EventStatus.FIRED:
                raise InvalidTransition(f"{target_id} is {event.status.value}, only fired events can be confirmed")
            return self.store.set_event_status(target_id, EventStatus.CONFIRMED, "confirm", actor="operator", at=now)
        if event.status is not EventStatus.PENDING:
            raise InvalidTransition(f"{target_id} is {event.status.value}, only pending events can be cancelled")
        return self.store.set_event_status(target_id, EventStatus.CANCELLED, "cancel", actor="operator", at=now)

    def cancel(self, event_id: str, now: datetime) -> ScheduledEvent:
        return self.confirm(event_id, "reject", now)

    # -- time ----------------------------------------------------------------

    def tick(self, clock: VirtualClock | datetime) -> list[ScheduledEvent]:
        """Fire every pending event due at ``clock.now``, each exactly once."""
        now = clock.now if isinstance(clock, VirtualClock) else clock
        due = [e for e in self.store.events() if e.status is EventStatus.PENDING and e.fire_at <= now]
        fired = []
        for ev in sorted(due, key=lambda e: (e.fire_at, e.event_id)):
            fired.append(self.store.set_event_status(ev.event_id, EventStatus.FIRED, "fire", at=now, detail=f"reminder: {ev.summary}"))
        return fired

    def awaiting_confirmation(self) -> list[ScheduledEvent]:
        if not self.confirm_on_fire:
            return []
        return [e for e in self.store.events() if e.status is EventStatus.FIRED]

    def pending_requests(self) -> list[dict[str, Any]]:
        return self.store.requests(pending_only=True)

    def materialized(self, intent_id: str) -> list[ScheduledEvent]:
        return self.store.events(intent_id)


def reminder_count_match(events_by_transcript: dict[str, int], expected: dict[str, int]) -> ProportionEstimate:
    """Share of labelled reminders whose materialised event count equals the label."""
    hits = sum(1 for tid, n in expected.items() if events_by_transcript.get(tid, 0) == n)
    return wilson_interval(hits, len(expected))
