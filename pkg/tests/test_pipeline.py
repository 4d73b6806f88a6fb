from __future__ import annotations

import json

import pytest

from carepipe.model import Disposition, PipelineOutcome, StageEntry, Transcript
from carepipe.pipeline import (
    Components,
    ReplayReport,
    StageBudget,
    apply_faults,
    cumulative_error,
    fixed_timer,
    parse_fault,
    replay,
    run_transcript,
)
from carepipe.store import Store

from conftest import utc

T0 = utc(2025, 3, 1, 9, 0)


def scripted_timer(seconds):
    it = iter(seconds)
    return lambda: next(it)


def outcome(tid, errors, latencies=None, disposition=Disposition.COMPLETED):
    latencies = latencies or [0.0] * len(errors)
    stages = tuple(StageEntry(s, True, e, t) for s, e, t in zip(("parse", "validate", "insert", "schedule"), errors, latencies))
    return PipelineOutcome(tid, stages, disposition)


def test_stage_latencies_sum_to_total(registries):
    # each stage reads the timer twice; 120, 40, 15 and 200 ms
    ticks = [0.0, 0.120, 0.120, 0.160, 0.160, 0.175, 0.175, 0.375]
    comps = Components.default(registries, timer=scripted_timer(ticks))
    t = Transcript("T1", "Remind me to check blood pressure for Harold at 2 pm", T0)
    run = run_transcript(t, comps)
    assert [s.stage for s in run.outcome.stages] == ["parse", "validate", "insert", "schedule"]
    assert [s.latency_ms for s in run.outcome.stages] == pytest.approx([120, 40, 15, 200])
    assert run.outcome.total_latency_ms == pytest.approx(375)


def test_cumulative_error_is_k_over_n():
    outs = [outcome("a", [1, 0, 0, 0]), outcome("b", [0, 0, 0]), outcome("c", [0, 0, 0, 0]), outcome("d", [1, 0, 0, 1])]
    assert cumulative_error(outs) == pytest.approx(3 / 4)
    deferred = outcome("e", [1.0], disposition=Disposition.CLARIFICATION_REQUESTED)
    assert cumulative_error(outs + [deferred]) == pytest.approx(3 / 4)
    assert cumulative_error([]) is None


def test_parse_fault_forms():
    assert parse_fault("delay_ms=3000").get("ms") == "3000"
    assert parse_fault("drop_field:field=category_id").get("field") == "category_id"
    assert parse_fault("wrong_resident").stage == "parse"
    for bad in ("bogus", "delay_ms=-1", "drop_field:field", "wrong_resident:rate=2", "delay_ms:ms=5,stage=nowhere"):
        with pytest.raises(ValueError):
            parse_fault(bad)


def test_budget_rejects_non_positive():
    with pytest.raises(ValueError):
        StageBudget(delta=0)


def test_replay_is_deterministic(corpus, baseline_report):
    comps = Components.default(corpus.registries, timer=fixed_timer())
    assert replay(corpus.transcripts, comps).to_json() == baseline_report.to_json()


def test_no_faults_is_identity(registries):
    comps = Components.default(registries)
    assert apply_faults(comps, []) == comps


def test_baseline_meets_budgets(baseline_report):
    assert baseline_report.violations == []
    assert baseline_report.E == 0.0


def test_wrong_resident_fault(fault_report):
    assert fault_report.metric("hallucination_count").value > 0
    assert fault_report.disposition_counts["rejected"] > 0
    assert fault_report.E > 0.05
    assert any(v.startswith("E=") for v in fault_report.violations)
    assert fault_report.faults == ["wrong_resident"]


def test_drop_field_rejects(corpus):
    comps = Components.default(corpus.registries, timer=fixed_timer())
    t = next(t for t in corpus.transcripts if t.truth is not None and t.truth.reminder)
    faulty = apply_faults(comps, ["drop_field:field=category_id"])
    run = run_transcript(t, faulty)
    assert run.outcome.disposition is Disposition.REJECTED
    assert "MissingField" in run.outcome.detail
    assert comps.store.records() == []


def test_delay_fault_flags_latency(corpus):
    sample = corpus.transcripts[:20]
    comps = Components.default(corpus.registries, timer=fixed_timer())
    report = replay(sample, comps, faults=["delay_ms=3000"])
    assert all(o.stages[0].latency_ms == 3000 for o in report.outcomes)
    assert any(v.startswith("max T=") for v in report.violations)
    assert report.metric("latency_budget_ok").value is False


def test_report_round_trip_and_recompute(baseline_report):
    back = ReplayReport.from_dict(json.loads(baseline_report.to_json()))
    assert back.to_json() == baseline_report.to_json()
    E, T = back.recompute()
    assert E == baseline_report.E
    assert T == baseline_report.latencies


def test_every_transcript_has_a_disposition(baseline_report, corpus):
    assert len(baseline_report.outcomes) == len(corpus.transcripts)
    assert sum(baseline_report.disposition_counts.values()) == len(corpus.transcripts)


def test_store_persists_outcomes(tmp_path, corpus):
    path = tmp_path / "store.jsonl"
    comps = Components.default(corpus.registries, store=Store(path), timer=fixed_timer())
    replay(corpus.transcripts[:5], comps)
    again = Store(path)
    assert again.snapshot() == comps.store.snapshot()
