from __future__ import annotations

import json
from datetime import timedelta

import pytest

from carepipe.model import Ambiguous, EventStatus, OneShot, Recurring, ReminderIntent, Transcript
from carepipe.parser import ClarificationRequest, RuleBasedParser
from carepipe.scheduler import ConfirmationRequest, Scheduler, VirtualClock, expand, reminder_count_match
from carepipe.store import InvalidTransition, Store, UnknownId

from conftest import DATA, utc

T0 = utc(2025, 3, 1, 9, 0)


def make(schedule, confidence=1.0, iid="i1"):
    return ReminderIntent(iid, "T1", "R01", "medication", "check blood pressure", schedule, confidence, T0)


@pytest.fixture
def sched():
    return Scheduler(Store())


def test_one_shot_from_the_example(registries, sched):
    out = RuleBasedParser().parse(Transcript("T1", "Remind me to check blood pressure for Harold at 2 pm", T0), registries)
    events = sched.schedule(out.reminder, T0)
    assert len(events) == 1
    assert events[0].fire_at == utc(2025, 3, 1, 14, 0) and events[0].status is EventStatus.PENDING


def test_recurring_expands(sched):
    events = sched.schedule(make(Recurring(utc(2025, 3, 2, 8, 0), 3)), T0)
    assert [e.fire_at for e in events] == [utc(2025, 3, d, 8, 0) for d in (2, 3, 4)]


def test_horizon_bounds_expansion():
    assert len(expand(Recurring(utc(2025, 3, 2, 8, 0), 31), max_horizon_days=31)) == 31
    with pytest.raises(ValueError):
        expand(Recurring(utc(2025, 3, 2, 8, 0), 60), max_horizon_days=31)


def test_ambiguous_clarifies(sched):
    result = sched.schedule(make(Ambiguous("later")), T0)
    assert isinstance(result, ClarificationRequest) and result.field == "time"
    assert sched.store.events() == []


def test_past_time_clarifies(sched):
    result = sched.schedule(make(OneShot(T0 - timedelta(hours=1))), T0)
    assert isinstance(result, ClarificationRequest)
    assert sched.store.events() == []


def test_low_confidence_needs_confirmation(sched):
    result = sched.schedule(make(OneShot(utc(2025, 3, 1, 14)), confidence=0.5), T0)
    assert isinstance(result, ConfirmationRequest)
    assert sched.store.events() == []
    events = sched.confirm(result.request_id, "approve", T0)
    assert len(events) == 1


def test_reject_cancels_request(sched):
    result = sched.schedule(make(OneShot(utc(2025, 3, 1, 14)), confidence=0.5), T0)
    assert sched.confirm(result.request_id, "reject", T0) is None
    assert sched.store.events() == []
    assert sched.store.audit_log("i1")[-1].action == "cancel"


def test_confirm_cancelled_event_is_invalid(sched):
    (ev,) = sched.schedule(make(OneShot(utc(2025, 3, 1, 14))), T0)
    sched.cancel(ev.event_id, T0)
    with pytest.raises(InvalidTransition):
        sched.confirm(ev.event_id, "approve", T0)
    with pytest.raises(UnknownId):
        sched.confirm("nope", "approve", T0)


def test_clarify_then_schedule(sched):
    req = sched.schedule(make(Ambiguous("later")), T0)
    events = sched.clarify(req.request_id, "2025-03-01T15:00:00Z", T0)
    assert [e.fire_at for e in events] == [utc(2025, 3, 1, 15)]
    with pytest.raises(InvalidTransition):
        sched.clarify(req.request_id, "2025-03-01T16:00:00Z", T0)


def test_tick_fires_exactly_once(sched):
    sched.schedule(make(OneShot(utc(2025, 3, 1, 14))), T0)
    clock = VirtualClock(T0)
    assert sched.tick(clock) == []
    clock.advance_to(utc(2025, 3, 1, 15))
    assert len(sched.tick(clock)) == 1
    assert sched.tick(clock) == []


def test_tick_fires_recurring_in_order(sched):
    sched.schedule(make(Recurring(utc(2025, 3, 2, 8, 0), 3)), T0)
    fired = sched.tick(VirtualClock(utc(2025, 3, 10)))
    assert [e.fire_at for e in fired] == sorted(e.fire_at for e in fired) and len(fired) == 3
    assert all(e.status is EventStatus.FIRED for e in fired)


def test_empty_tick(sched):
    assert sched.tick(VirtualClock(T0)) == []


def test_confirm_fired_event(sched):
    (ev,) = sched.schedule(make(OneShot(utc(2025, 3, 1, 14))), T0)
    sched.tick(utc(2025, 3, 1, 14))
    assert sched.confirm(ev.event_id, "approve", utc(2025, 3, 1, 14, 5)).status is EventStatus.CONFIRMED


def test_awaiting_confirmation_only_when_configured():
    s = Scheduler(Store(), confirm_on_fire=True)
    s.schedule(make(OneShot(utc(2025, 3, 1, 14))), T0)
    s.tick(utc(2025, 3, 1, 14))
    assert len(s.awaiting_confirmation()) == 1
    off = Scheduler(Store())
    off.schedule(make(OneShot(utc(2025, 3, 1, 14))), T0)
    off.tick(utc(2025, 3, 1, 14))
    assert off.awaiting_confirmation() == []


def test_clock_never_moves_back():
    clock = VirtualClock(T0)
    with pytest.raises(ValueError):
        clock.advance_to(T0 - timedelta(seconds=1))


def test_count_match_examples():
    assert reminder_count_match({"a": 1}, {"a": 1}).successes == 1
    est = reminder_count_match({"a": 2}, {"a": 3})
    assert est.successes == 0 and est.n == 1


def test_count_match_against_hand_labels(baseline_run):
    """Replayed event counts equal the counts labelled by reading the text."""
    _, comps = baseline_run
    hand = json.loads((DATA / "hand_labels.json").read_text())["counts"]
    counts = {tid: len(comps.store.events(f"{tid}:rem")) for tid in hand}
    labelled = {tid: n for tid, n in hand.items() if n is not None}
    est = reminder_count_match(counts, labelled)
    assert (est.successes, est.n) == (len(labelled), len(labelled))
    assert all(counts[tid] == 0 for tid, n in hand.items() if n is None)


def test_clarify_accepts_a_datetime(sched):
    req = sched.schedule(make(Ambiguous("later")), T0)
    (ev,) = sched.clarify(req.request_id, utc(2025, 3, 1, 16), T0)
    assert ev.fire_at == utc(2025, 3, 1, 16)
