from __future__ import annotations

import pytest

from carepipe.assurance import (
    DEFEATED,
    SUPPORTED,
    UNDETERMINED,
    UNSUPPORTED,
    AssuranceNode,
    Binding,
    CaseError,
    CycleDetected,
    DanglingChild,
    UnknownMetricBinding,
    build_case,
    evaluate_case,
    load_case,
    render_report,
)
from carepipe.metrics import MetricResult, wilson_interval

KNOWN = ("rate", "count")


def ev(nid, metric="rate", op=">=", threshold=0.9, field="ci_low"):
    return AssuranceNode(nid, "evidence", nid, binding=Binding(metric, op, threshold, field))


def small_case():
    return build_case(
        [
            AssuranceNode("C", "claim", "top", ("A",)),
            AssuranceNode("A", "argument", "arg", ("E1", "E2", "D")),
            ev("E1"),
            ev("E2", "count", "==", 0, "value"),
            AssuranceNode("D", "defeater", "doubt"),
        ],
        KNOWN,
    )


def results(successes=99, count=0):
    return [MetricResult("rate", estimate=wilson_interval(successes, 100)), MetricResult("count", value=count)]


def test_build_errors():
    with pytest.raises(CaseError):
        build_case([AssuranceNode("X", "claim", ""), AssuranceNode("X", "claim", "")], KNOWN)
    with pytest.raises(CycleDetected):
        build_case([AssuranceNode("R", "claim", "", ("X",)), AssuranceNode("X", "claim", "", ("Y",)), AssuranceNode("Y", "argument", "", ("X",))], KNOWN)
    with pytest.raises(DanglingChild):
        build_case([AssuranceNode("X", "claim", "", ("nope",))], KNOWN)
    with pytest.raises(UnknownMetricBinding):
        build_case([ev("E", metric="made_up")], KNOWN)
    with pytest.raises(CaseError):
        build_case([AssuranceNode("X", "claim", "", binding=Binding("rate", ">=", 0.9))], KNOWN)
    with pytest.raises(CaseError):
        build_case([AssuranceNode("E", "evidence", "", ("X",)), AssuranceNode("X", "claim", "")], KNOWN)
    with pytest.raises(CaseError):
        Binding("rate", "~", 1)


def test_all_supported():
    status = evaluate_case(small_case(), results())
    assert status.verdict == SUPPORTED and status.missing == {}


def test_failing_evidence_propagates():
    status = evaluate_case(small_case(), results(successes=50))
    assert status.statuses["E1"] == UNSUPPORTED and status.verdict == UNSUPPORTED


def test_missing_metric_is_undetermined():
    status = evaluate_case(small_case(), [MetricResult("rate", estimate=wilson_interval(99, 100))])
    assert status.statuses["E2"] == UNDETERMINED and status.verdict == UNDETERMINED
    assert status.missing == {"E2": "count"}


def test_defeater_defeats_parent():
    status = evaluate_case(small_case(), results(), ["D"])
    assert status.statuses["A"] == DEFEATED and status.verdict == DEFEATED
    with pytest.raises(CaseError):
        evaluate_case(small_case(), results(), ["E1"])


def test_unsupported_outranks_defeated():
    case = build_case(
        [
            AssuranceNode("C", "claim", "", ("A1", "A2")),
            AssuranceNode("A1", "argument", "", ("E1", "D")),
            AssuranceNode("A2", "argument", "", ("E2",)),
            ev("E1"),
            ev("E2", "count", "==", 0, "value"),
            AssuranceNode("D", "defeater", ""),
        ],
        KNOWN,
    )
    assert evaluate_case(case, results(count=3), ["D"]).verdict == UNSUPPORTED
    assert evaluate_case(case, results(count=0), ["D"]).verdict == DEFEATED


def test_render_report_has_verdict_line():
    case = small_case()
    text = render_report(case, evaluate_case(case, results()), results())
    assert text.rstrip().endswith("Verdict: C is supported")
    assert "requires rate.ci_low >= 0.9" in text


def test_bundled_case_loads_with_top_claim():
    case = load_case()
    assert case.top == "C1" and case.nodes["D2.2"].kind == "defeater"


def test_bundled_verdicts(baseline_report, fault_report):
    case = load_case()
    assert evaluate_case(case, baseline_report.metrics).verdict == SUPPORTED
    bad = evaluate_case(case, fault_report.metrics)
    assert bad.verdict == UNSUPPORTED
    assert bad.statuses["E2.5a"] == UNSUPPORTED and bad.statuses["C2.5"] == UNSUPPORTED
    defeated = evaluate_case(case, baseline_report.metrics, ["D2.2"])
    assert defeated.verdict == DEFEATED and defeated.statuses["A1"] == DEFEATED
