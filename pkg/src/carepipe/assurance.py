"""Assurance case graph: claims, arguments, evidence and defeaters.

Evidence nodes carry a binding to one field of one metric result. Status
flows upward: an active defeater defeats its parent outright; otherwise the
worst child status wins, in the order unsupported, defeated, undetermined,
supported.
"""

from __future__ import annotations

import json
import operator
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .metrics import METRIC_NAMES, MetricResult, percent
from .model import CarepipeError, data_path

KINDS = ("claim", "argument", "evidence", "defeater")
SUPPORTED, UNSUPPORTED, DEFEATED, UNDETERMINED = "supported", "unsupported", "defeated", "undetermined"
ACTIVE, INACTIVE = "active", "inactive"
_SEVERITY = {UNSUPPORTED: 3, DEFEATED: 2, UNDETERMINED: 1, SUPPORTED: 0}

OPS = {">=": operator.ge, ">": operator.gt, "<=": operator.le, "<": operator.lt, "==": operator.eq, "!=": operator.ne}


class CaseError(CarepipeError):
    pass


class CycleDetected(CaseError):
    pass


class DanglingChild(CaseError):
    pass


class UnknownMetricBinding(CaseError):
    pass


@dataclass(frozen=True)
class Binding:
    metric: str
    op: str
    threshold: Any
    field: str = "ci_low"

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise CaseError(f"unknown comparator {self.op!r}")

    def describe(self) -> str:
        return f"{self.metric}.{self.field} {self.op} {self.threshold}"

    def to_dict(self) -> dict[str, Any]:
        return {"metric": self.metric, "field": self.field, "op": self.op, "threshold": self.threshold}


@dataclass(frozen=True)
class AssuranceNode:
    id: str
    kind: str
    text: str
    children: tuple[str, ...] = ()
    binding: Binding | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "kind": self.kind, "text": self.text, "children": list(self.children)}
        if self.binding is not None:
            out["binding"] = self.binding.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AssuranceNode:
        b = d.get("binding")
        binding = Binding(b["metric"], b["op"], b["threshold"], b.get("field", "ci_low")) if b else None
        return cls(str(d["id"]), str(d["kind"]), str(d.get("text", "")), tuple(d.get("children", ())), binding)


@dataclass(frozen=True)
class AssuranceCase:
    nodes: dict[str, AssuranceNode]
    order: tuple[str, ...]

    @property
    def roots(self) -> list[str]:
        children = {c for n in self.nodes.values() for c in n.children}
        return [nid for nid in self.order if nid not in children]

    @property
    def top(self) -> str:
        return self.roots[0]

    def parents(self, node_id: str) -> list[str]:
        return [n.id for n in self.nodes.values() if node_id in n.children]


def build_case(nodes: Iterable[AssuranceNode], known_metrics: Iterable[str] = METRIC_NAMES) -> AssuranceCase:
    known = set(known_metrics)
    table: dict[str, AssuranceNode] = {}
    order = []
    for node in nodes:
        if node.id in table:
            raise CaseError(f"duplicate node id {node.id}")
        if node.kind not in KINDS:
            raise CaseError(f"{node.id}: unknown kind {node.kind!r}")
        if node.binding is not None:
            if node.kind != "evidence":
                raise CaseError(f"{node.id}: only evidence nodes take a metric binding")
            if node.binding.metric not in known:
                raise UnknownMetricBinding(f"{node.id} is bound to unknown metric {node.binding.metric!r}")
        if node.kind in ("evidence", "defeater") and node.children:
            raise CaseError(f"{node.id}: {node.kind} nodes are leaves")
        table[node.id] = node
        order.append(node.id)
    for node in table.values():
        for child in node.children:
            if child not in table:
                raise DanglingChild(f"{node.id} lists missing child {child}")
            if table[child].kind == "defeater" and node.kind not in ("claim", "argument"):
                raise CaseError(f"defeater {child} must attach to a claim or argument")

    state: dict[str, int] = {}

    def visit(nid: str, path: list[str]) -> None:
        if state.get(nid) == 2:
            return
        if state.get(nid) == 1:
            raise CycleDetected(" -> ".join(path[path.index(nid):] + [nid]))
        state[nid] = 1
        for child in table[nid].children:
            visit(child, path + [nid])
        state[nid] = 2

    for nid in order:
        visit(nid, [])
    case = AssuranceCase(table, tuple(order))
    if table and not case.roots:
        raise CycleDetected("no root node")
    return case


def load_case(path: str | Path | None = None, known_metrics: Iterable[str] = METRIC_NAMES) -> AssuranceCase:
    """Read a line-delimited case definition; the bundled case by default."""
    path = Path(path) if path is not None else data_path("default_case.jsonl")
    nodes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                nodes.append(AssuranceNode.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CaseError(f"{path}:{line_no}: {exc}") from exc
    return build_case(nodes, known_metrics)


# -- evaluation --------------------------------------------------------------


@dataclass
class CaseStatus:
    statuses: dict[str, str]
    top: str
    missing: dict[str, str] = field(default_factory=dict)
    observed: dict[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.statuses[self.top]

    def to_dict(self) -> dict[str, Any]:
        return {
            "top": self.top,
            "verdict": self.verdict,
            "statuses": dict(sorted(self.statuses.items())),
            "missing_metrics": dict(sorted(self.missing.items())),
            "observed": dict(sorted(self.observed.items())),
        }


def _as_results(metrics: Mapping[str, Any] | Iterable[MetricResult]) -> dict[str, dict[str, Any]]:
    if isinstance(metrics, Mapping):
        items = metrics.values()
    else:
        items = metrics
    out = {}
    for m in items:
        d = m.to_dict() if isinstance(m, MetricResult) else dict(m)
        out[d["metric"]] = d
    return out


def evaluate_case(
    case: AssuranceCase,
    metrics: Mapping[str, Any] | Iterable[MetricResult],
    active_defeaters: Iterable[str] = (),
) -> CaseStatus:
    """Pure function of the graph, the metric results and the defeater flags."""
    results = _as_results(metrics)
    active = set(active_defeaters)
    unknown = active - {n.id for n in case.nodes.values() if n.kind == "defeater"}
    if unknown:
        raise CaseError(f"not defeater nodes: {sorted(unknown)}")
    statuses: dict[str, str] = {}
    missing: dict[str, str] = {}
    observed: dict[str, Any] = {}

    def status(nid: str) -> str:
        if nid in statuses:
            return statuses[nid]
        node = case.nodes[nid]
        if node.kind == "defeater":
            s = ACTIVE if nid in active else INACTIVE
        elif node.kind == "evidence":
            s = _evidence_status(node, results, missing, observed)
        else:
            kids = node.children
            defeaters = [c for c in kids if case.nodes[c].kind == "defeater"]
            others = [status(c) for c in kids if case.nodes[c].kind != "defeater"]
            for d in defeaters:
                status(d)
            if any(d in active for d in defeaters):
                s = DEFEATED
            elif not others:
                s = UNDETERMINED
            else:
                s = max(others, key=_SEVERITY.__getitem__)
        statuses[nid] = s
        return s

    for nid in case.order:
        status(nid)
    return CaseStatus(statuses, case.top, missing, observed)


def _evidence_status(node: AssuranceNode, results: dict[str, dict[str, Any]], missing: dict[str, str], observed: dict[str, Any]) -> str:
    b = node.binding
    if b is None:
        return UNDETERMINED
    value = results.get(b.metric, {}).get(b.field)
    if value is None:
        missing[node.id] = b.metric
        return UNDETERMINED
    observed[node.id] = value
    try:
        ok = OPS[b.op](value, b.threshold)
    except TypeError:
        missing[node.id] = b.metric
        return UNDETERMINED
    return SUPPORTED if ok else UNSUPPORTED


# -- reporting ---------------------------------------------------------------


def _metric_text(d: dict[str, Any]) -> str:
    if "p_hat" in d:
        return f"{d['successes']}/{d['n']} = {percent(d['p_hat'])}% (95% CI {percent(d['ci_low'])}-{percent(d['ci_high'])}%)"
    if "mean" in d:
        return f"n={d['n']} mean={d['mean']:.4f} p25={d['p25']:.4f} p75={d['p75']:.4f}"
    return json.dumps(d.get("value"), sort_keys=True)


def render_report(case: AssuranceCase, status: CaseStatus, metrics: Mapping[str, Any] | Iterable[MetricResult]) -> str:
    """Indented tree of node statuses, bound metric values and a verdict line."""
    results = _as_results(metrics)
    lines = [f"Assurance case: {case.top}", ""]
    seen: set[str] = set()

    def walk(nid: str, depth: int) -> None:
        node = case.nodes[nid]
        pad = "  " * depth
        lines.append(f"{pad}[{status.statuses[nid]}] {nid} ({node.kind}): {node.text}")
        if node.binding is not None:
            b = node.binding
            if nid in status.missing:
                lines.append(f"{pad}    requires {b.describe()}; metric missing: {b.metric}")
            else:
                lines.append(f"{pad}    requires {b.describe()}; observed {_metric_text(results[b.metric])}")
        if nid in seen:
            return
        seen.add(nid)
        for child in node.children:
            walk(child, depth + 1)

    for root in case.roots:
        walk(root, 0)
    lines.append("")
    if status.missing:
        lines.append("Missing metrics: " + ", ".join(sorted(set(status.missing.values()))))
    lines.append(f"Verdict: {case.top} is {status.verdict}")
    return "\n".join(lines) + "\n"
