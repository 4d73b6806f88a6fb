"""End-to-end harness: parse, validate, insert, schedule.

Each stage records a 0/1 error against ground truth (when the transcript has
any) and its latency. Clarification and confirmation requests end a run as a
safe deferral; they are counted separately and kept out of error rates.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
import time
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from .metrics import (
    ConfusionMatrix,
    MetricResult,
    ZeroVector,
    accuracy,
    cosine_distance,
    distance_summary,
    joint_id_category_accuracy,
    precision,
    recall,
    wilson_interval,
    wmd,
)
from .model import (
    CareRecord,
    Disposition,
    PipelineOutcome,
    Registries,
    ScheduledEvent,
    StageEntry,
    Transcript,
    ValidationError,
    validate_record,
)
from .parser import PARSED, ClarificationRequest, ParseOutcome, ParserAdapter, RuleBasedParser
from .retrieval import HYBRID, HashingEmbedder, RetrievalSettings, Retriever, needle_harness
from .scheduler import ConfirmationRequest, Scheduler
from .store import Store


@dataclass(frozen=True)
class StageBudget:
    """Upper bounds on mean cumulative error and per-transcript latency."""

    delta: float = 0.05
    tau_ms: float = 2000.0

    def __post_init__(self) -> None:
        if self.delta <= 0 or self.tau_ms <= 0:
            raise ValueError("budget bounds must be positive")


def fixed_timer() -> Callable[[], float]:
    """A timer that never advances: measured latency is zero, so only
    simulated delays show up and reports are byte-for-byte reproducible."""
    return lambda: 0.0


@dataclass
class Components:
    parser: ParserAdapter
    registries: Registries
    store: Store
    scheduler: Scheduler
    validator: Callable[[Any, Registries], CareRecord] = validate_record
    timer: Callable[[], float] = time.perf_counter

    @classmethod
    def default(cls, registries: Registries, store: Store | None = None, parser: ParserAdapter | None = None, timer: Callable[[], float] | None = None, **scheduler_kw) -> Components:
        store = store if store is not None else Store()
        return cls(
            parser or RuleBasedParser(),
            registries,
            store,
            Scheduler(store, **scheduler_kw),
            timer=timer or time.perf_counter,
        )


@dataclass
class TranscriptRun:
    """Everything one pipeline run produced, beyond the outcome itself."""

    transcript: Transcript
    outcome: PipelineOutcome
    parse: ParseOutcome | None = None
    record: CareRecord | None = None
    events: list[ScheduledEvent] = field(default_factory=list)
    request: ClarificationRequest | ConfirmationRequest | None = None

    @property
    def parsed(self) -> bool:
        return self.parse is not None and self.parse.disposition == PARSED


class _Stages:
    def __init__(self, components: Components):
        self.c = components
        self.entries: list[StageEntry] = []

    def timed(self, stage: str, component: Any, fn: Callable[[], Any]) -> tuple[Any, BaseException | None, float]:
        t0 = self.c.timer()
        try:
            value, err = fn(), None
        except Exception as exc:  # captured in the outcome, never re-raised
            value, err = None, exc
        elapsed = (self.c.timer() - t0) * 1000.0 + float(getattr(component, "simulated_delay_ms", 0.0))
        return value, err, max(0.0, elapsed)

    def add(self, stage: str, success: bool, epsilon: float | None, latency: float) -> None:
        self.entries.append(StageEntry(stage, success, epsilon, latency))


def _eps(has_truth: bool, wrong: bool) -> float | None:
    return (1.0 if wrong else 0.0) if has_truth else None


def run_transcript(
    transcript: Transcript,
    components: Components,
    now: datetime | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> TranscriptRun:
    """Run one transcript through the four stages in order."""
    c = components
    truth = transcript.truth
    has_truth = truth is not None
    now = now or transcript.spoken_at
    st = _Stages(c)

    def finish(disposition: Disposition, detail: str = "", **kw) -> TranscriptRun:
        outcome = PipelineOutcome(transcript.id, tuple(st.entries), disposition, detail)
        return TranscriptRun(transcript, outcome, **kw)

    # parse
    parsed, err, ms = st.timed("parse", c.parser, lambda: c.parser.parse(transcript, c.registries, overrides))
    if err is not None:
        st.add("parse", False, _eps(has_truth, True), ms)
        return finish(Disposition.REJECTED, f"parse failed: {err}")
    if parsed.disposition != PARSED:
        st.add("parse", True, None, ms)
        req = parsed.clarification
        if c.store.request(req.request_id) is None:
            c.store.add_request(dict(req.to_dict(), intent_id=transcript.id), actor="parser", at=now)
        return finish(Disposition.CLARIFICATION_REQUESTED, f"clarify {req.field}", parse=parsed, request=req)
    fields = parsed.record_fields or {}
    wrong = has_truth and (
        fields.get("resident_id") != truth.resident_id
        or fields.get("category_id") != truth.category_id
        or (parsed.reminder is not None) != truth.reminder
    )
    st.add("parse", True, _eps(has_truth, wrong), ms)

    # validate
    record, err, ms = st.timed("validate", c.validator, lambda: c.validator(fields, c.registries))
    if err is not None:
        st.add("validate", False, _eps(has_truth, True), ms)
        codes = sorted(err.codes) if isinstance(err, ValidationError) else [type(err).__name__]
        c.store.audit("validator", "reject", str(fields.get("record_id", transcript.id)), "invalid record: " + ",".join(codes), at=now)
        return finish(Disposition.REJECTED, "validation failed: " + ",".join(codes), parse=parsed)
    st.add("validate", True, _eps(has_truth, False), ms)

    # insert
    def insert() -> CareRecord | None:
        c.store.insert_record(record, at=now)
        return c.store.get_record(record.record_id)

    stored, err, ms = st.timed("insert", c.store, insert)
    if err is not None:
        st.add("insert", False, _eps(has_truth, True), ms)
        return finish(Disposition.REJECTED, f"insert failed: {err}", parse=parsed)
    st.add("insert", stored == record, _eps(has_truth, stored != record), ms)

    intent = parsed.reminder
    if intent is None:
        return finish(Disposition.COMPLETED, parse=parsed, record=stored)

    # schedule
    result, err, ms = st.timed("schedule", c.scheduler, lambda: c.scheduler.schedule(intent, now))
    if err is not None:
        st.add("schedule", False, _eps(has_truth, True), ms)
        return finish(Disposition.REJECTED, f"schedule failed: {err}", parse=parsed, record=stored)
    if isinstance(result, (ClarificationRequest, ConfirmationRequest)):
        st.add("schedule", True, None, ms)
        what = "time" if isinstance(result, ClarificationRequest) else "confirmation"
        return finish(Disposition.CLARIFICATION_REQUESTED, f"clarify {what}", parse=parsed, record=stored, request=result)
    st.add("schedule", True, _schedule_eps(truth, len(result)), ms)
    return finish(Disposition.COMPLETED, parse=parsed, record=stored, events=list(result))


def _schedule_eps(truth, n_events: int) -> float | None:
    if truth is None:
        return None
    if not truth.reminder:
        return 1.0 if n_events else 0.0
    if truth.expected_event_count is None:
        # the label gives no count to compare against
        return None
    return 0.0 if n_events == truth.expected_event_count else 1.0


def run_pipeline(transcript: Transcript, components: Components, now: datetime | None = None) -> PipelineOutcome:
    return run_transcript(transcript, components, now).outcome


def complete_schedule(run: TranscriptRun, events: Sequence[ScheduledEvent]) -> TranscriptRun:
    """Close a run whose schedule stage was deferred, once a human resolved it."""
    stages = list(run.outcome.stages)
    last = stages[-1]
    stages[-1] = StageEntry("schedule", True, _schedule_eps(run.transcript.truth, len(events)), last.latency_ms)
    outcome = PipelineOutcome(run.outcome.transcript_id, tuple(stages), Disposition.COMPLETED, "resolved by operator")
    return dataclasses.replace(run, outcome=outcome, events=list(events), request=None)


# -- fault injection ---------------------------------------------------------

FAULT_KINDS = ("drop_field", "wrong_resident", "delay_ms")
_FAULT_STAGE = {"drop_field": "parse", "wrong_resident": "parse"}


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    params: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default: Any = None) -> Any:
        return dict(self.params).get(key, default)

    @property
    def stage(self) -> str:
        return _FAULT_STAGE.get(self.kind) or self.get("stage", "parse")

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(f"{k}={v}" for k, v in self.params)


def parse_fault(spec: str) -> FaultSpec:
    """``kind[:key=value,...]``; ``delay_ms=3000`` is shorthand for ``delay_ms:ms=3000``."""
    spec = spec.strip()
    if spec.startswith("delay_ms=") and ":" not in spec:
        spec = "delay_ms:ms=" + spec.split("=", 1)[1]
    kind, _, rest = spec.partition(":")
    if kind not in FAULT_KINDS:
        raise ValueError(f"unknown fault {kind!r}; expected one of {', '.join(FAULT_KINDS)}")
    params = []
    for part in filter(None, rest.split(",")):
        key, eq, value = part.partition("=")
        if not eq:
            raise ValueError(f"fault parameter {part!r} is not key=value")
        params.append((key.strip(), value.strip()))
    fault = FaultSpec(kind, tuple(params))
    if kind == "delay_ms":
        if float(fault.get("ms", "nan")) < 0 or math.isnan(float(fault.get("ms", "nan"))):
            raise ValueError("delay_ms needs a non-negative ms value")
        if fault.stage not in ("parse", "validate", "insert", "schedule"):
            raise ValueError(f"unknown stage {fault.stage!r}")
    if not 0 <= float(fault.get("rate", 1.0)) <= 1:
        raise ValueError("rate must lie in [0, 1]")
    if kind == "wrong_resident" and fault.get("mode", "fabricated") not in ("fabricated", "swap"):
        raise ValueError("wrong_resident mode is fabricated or swap")
    return fault


class FaultyParser:
    """Corrupts a seeded fraction of parsed outputs; passes everything else through.

    ``wrong_resident`` with mode ``fabricated`` writes an id absent from the
    registry (a hallucination); mode ``swap`` picks a different real resident.
    ``drop_field`` removes one field (``resident_id`` by default).
    """

    def __init__(self, base: ParserAdapter, fault: FaultSpec, seed: int = 0):
        self.base = base
        self.fault = fault
        self.rate = float(fault.get("rate", 1.0))
        self.seed = int(fault.get("seed", seed))
        self.simulated_delay_ms = getattr(base, "simulated_delay_ms", 0.0)

    def _selected(self, tid: str) -> bool:
        return random.Random(f"{self.seed}:{tid}").random() < self.rate

    def parse(self, transcript, registries, overrides=None) -> ParseOutcome:
        out = self.base.parse(transcript, registries, overrides)
        if out.disposition != PARSED or not self._selected(transcript.id):
            return out
        fields = out.record_fields or {}
        reminder = out.reminder
        if self.fault.kind == "wrong_resident":
            current = fields.get("resident_id", "")
            if self.fault.get("mode", "fabricated") == "swap":
                others = [r.id for r in registries.residents if r.id != current]
                new_id = random.Random(f"{self.seed}:{transcript.id}:swap").choice(others) if others else current
            else:
                new_id = f"X{current or 'R'}"
                while registries.has_resident(new_id):
                    new_id = "X" + new_id
            fields = dict(fields, resident_id=new_id)
            if reminder is not None:
                reminder = dataclasses.replace(reminder, resident_id=new_id)
        else:
            fields = {k: v for k, v in fields.items() if k != self.fault.get("field", "resident_id")}
        return ParseOutcome(PARSED, record=fields, reminder=reminder)


class Delayed:
    """Transparent proxy that adds simulated latency to one stage."""

    def __init__(self, base: Any, delay_ms: float):
        object.__setattr__(self, "_base", base)
        object.__setattr__(self, "simulated_delay_ms", float(getattr(base, "simulated_delay_ms", 0.0)) + delay_ms)

    def __getattr__(self, name: str) -> Any:
        return getattr(self._base, name)

    def __call__(self, *args, **kwargs):
        return self._base(*args, **kwargs)


def inject_fault(component: Any, fault: FaultSpec | str, seed: int = 0) -> Any:
    """Wrap one component with a deterministic fault."""
    fault = parse_fault(fault) if isinstance(fault, str) else fault
    if fault.kind == "delay_ms":
        return Delayed(component, float(fault.get("ms")))
    if not hasattr(component, "parse"):
        raise TypeError(f"{fault.kind} applies to a parser, got {type(component).__name__}")
    return FaultyParser(component, fault, seed)


_STAGE_ATTR = {"parse": "parser", "validate": "validator", "insert": "store", "schedule": "scheduler"}


def apply_faults(components: Components, faults: Iterable[FaultSpec | str], seed: int = 0) -> Components:
    """Copy of ``components`` with each fault wrapped around its stage's component."""
    out = dataclasses.replace(components)
    for f in faults:
        f = parse_fault(f) if isinstance(f, str) else f
        attr = _STAGE_ATTR[f.stage]
        setattr(out, attr, inject_fault(getattr(out, attr), f, seed))
    return out


# -- replay ------------------------------------------------------------------


@dataclass(frozen=True)
class ReplaySettings:
    budget: StageBudget = StageBudget()
    retrieval: RetrievalSettings = RetrievalSettings()
    seed: int = 42
    needle_routine: int = 500
    retrieval_k: int = 10


@dataclass
class ReplayReport:
    outcomes: list[PipelineOutcome]
    metrics: list[MetricResult]
    budget: StageBudget
    corpus_size: int
    faults: list[str] = field(default_factory=list)
    defeaters: list[str] = field(default_factory=list)

    @property
    def metric_map(self) -> dict[str, MetricResult]:
        return {m.metric: m for m in self.metrics}

    def metric(self, name: str) -> MetricResult:
        return self.metric_map[name]

    @property
    def E(self) -> float | None:
        return self.metric("cumulative_error_E").value

    @property
    def latencies(self) -> dict[str, float]:
        return {o.transcript_id: o.total_latency_ms for o in self.outcomes}

    @property
    def disposition_counts(self) -> dict[str, int]:
        return self.metric("disposition_counts").value

    @property
    def violations(self) -> list[str]:
        out = []
        m = self.metric_map
        if m["error_budget_ok"].value is False:
            out.append(f"E={m['cumulative_error_E'].value:.6f} exceeds delta={self.budget.delta}")
        if m["latency_budget_ok"].value is False:
            out.append(f"max T={m['latency_max_ms'].value:.3f} ms exceeds tau={self.budget.tau_ms} ms")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "corpus_size": self.corpus_size,
            "budget": {"delta": self.budget.delta, "tau_ms": self.budget.tau_ms},
            "faults": list(self.faults),
            "defeaters": list(self.defeaters),
            "violations": self.violations,
            "metrics": [m.to_dict() for m in self.metrics],
            "outcomes": [o.to_dict() for o in self.outcomes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ReplayReport:
        return cls(
            [PipelineOutcome.from_dict(o) for o in d["outcomes"]],
            [MetricResult.from_dict(m) for m in d["metrics"]],
            StageBudget(d["budget"]["delta"], d["budget"]["tau_ms"]),
            d["corpus_size"],
            list(d.get("faults", ())),
            list(d.get("defeaters", ())),
        )

    def recompute(self) -> tuple[float | None, dict[str, float]]:
        """E and per-transcript T straight from the stage logs."""
        return cumulative_error(self.outcomes), {o.transcript_id: math.fsum(s.latency_ms for s in o.stages) for o in self.outcomes}

    def render_text(self) -> str:
        from .metrics import percent

        lines = [f"Replay of {self.corpus_size} transcripts", ""]
        counts = self.disposition_counts
        lines.append("Dispositions: " + ", ".join(f"{k}={counts[k]}" for k in sorted(counts)))
        for m in self.metrics:
            d = m.to_dict()
            if "p_hat" in d:
                lines.append(f"{m.metric}: {d['successes']}/{d['n']} = {percent(d['p_hat'])}% [95% CI {percent(d['ci_low'])}, {percent(d['ci_high'])}]")
            elif "mean" in d:
                lines.append(f"{m.metric}: n={d['n']} mean={d['mean']:.4f} p25={d['p25']:.4f} p75={d['p75']:.4f}")
            elif m.metric != "disposition_counts":
                lines.append(f"{m.metric}: {json.dumps(d['value'], sort_keys=True)}")
        lines.append("")
        lines.extend(["Budget violations:"] + [f"  {v}" for v in self.violations] if self.violations else ["Budgets met"])
        return "\n".join(lines) + "\n"


def cumulative_error(outcomes: Iterable[PipelineOutcome]) -> float | None:
    """Mean per-transcript error sum over non-deferred outcomes with truth."""
    totals = [
        o.total_error for o in outcomes
        if o.disposition is not Disposition.CLARIFICATION_REQUESTED and o.total_error is not None
    ]
    return math.fsum(totals) / len(totals) if totals else None


def _proportion(name: str, successes: int, n: int) -> MetricResult:
    if n == 0:
        return MetricResult(name, value=None)
    return MetricResult(name, estimate=wilson_interval(successes, n))


def _summary(name: str, samples: list[float]) -> MetricResult:
    return MetricResult(name, summary=distance_summary(samples)) if samples else MetricResult(name, value=None)


def _rate(name: str, fn, cm: ConfusionMatrix, successes: int, n: int) -> MetricResult:
    try:
        fn(cm)
    except ValueError:
        return MetricResult(name, value=None)
    return _proportion(name, successes, n)


def compute_metrics(
    runs: Sequence[TranscriptRun],
    store: Store,
    registries: Registries,
    corpus_size: int,
    settings: ReplaySettings = ReplaySettings(),
) -> list[MetricResult]:
    embedder = HashingEmbedder(settings.retrieval.dim)
    labelled = [r for r in runs if r.transcript.truth is not None]
    parsed = [r for r in labelled if r.parsed]
    results: list[MetricResult] = [_proportion("transcript_ingest", len(runs), corpus_size)]

    def pair(r: TranscriptRun) -> tuple[str, str] | None:
        if not r.parsed:
            return None
        f = r.parse.record_fields or {}
        return (f.get("resident_id"), f.get("category_id"))

    def truth_pair(r: TranscriptRun) -> tuple[str, str]:
        return (r.transcript.truth.resident_id, r.transcript.truth.category_id)

    # runs that never produced a parse because the parser asked for help are
    # a safe deferral and leave the denominator; the second figure keeps them
    scored = [r for r in labelled if r.parsed or r.request is None]
    if scored:
        results.append(MetricResult("joint_id_category_accuracy", estimate=joint_id_category_accuracy([pair(r) for r in scored], [truth_pair(r) for r in scored])))
    else:
        results.append(MetricResult("joint_id_category_accuracy", value=None))
    if labelled:
        results.append(MetricResult("joint_id_category_accuracy_with_deferrals", estimate=joint_id_category_accuracy([pair(r) for r in labelled], [truth_pair(r) for r in labelled])))
    else:
        results.append(MetricResult("joint_id_category_accuracy_with_deferrals", value=None))
    results.append(_proportion("resident_id_match", sum(1 for r in scored if (pair(r) or (None,))[0] == r.transcript.truth.resident_id), len(scored)))
    results.append(_proportion("category_match", sum(1 for r in scored if (pair(r) or (None, None))[1] == r.transcript.truth.category_id), len(scored)))

    cm = ConfusionMatrix.from_pairs([r.parse.reminder is not None for r in parsed], [r.transcript.truth.reminder for r in parsed])
    results.append(_rate("reminder_recognition_accuracy", accuracy, cm, cm.tp + cm.tn, cm.total))
    results.append(_rate("reminder_precision", precision, cm, cm.tp, cm.tp + cm.fp))
    results.append(_rate("reminder_recall", recall, cm, cm.tp, cm.tp + cm.fn))
    results.append(MetricResult("reminder_confusion", value=cm.to_dict()))

    def stored_ok(r: TranscriptRun) -> bool:
        t = r.transcript.truth
        rec = store.get_record(r.record.record_id) if r.record is not None else None
        return rec is not None and (rec.resident_id, rec.category_id, rec.note) == (t.resident_id, t.category_id, t.note)

    results.append(_proportion("database_insertion_accuracy", sum(stored_ok(r) for r in parsed), len(parsed)))

    countable = [
        r for r in labelled
        if r.transcript.truth.reminder and r.transcript.truth.expected_event_count is not None
        and r.outcome.disposition is not Disposition.CLARIFICATION_REQUESTED
    ]
    results.append(_proportion("reminder_count_match", sum(len(r.events) == r.transcript.truth.expected_event_count for r in countable), len(countable)))

    def hallucinated(r: TranscriptRun) -> bool:
        if not r.parsed:
            return False
        f = r.parse.record_fields or {}
        ids = [(f.get("resident_id"), f.get("category_id"))]
        if r.parse.reminder is not None:
            ids.append((r.parse.reminder.resident_id, r.parse.reminder.category_id))
        return any(
            (res is not None and not registries.has_resident(res)) or (cat is not None and not registries.has_category(cat))
            for res, cat in ids
        )

    results.append(MetricResult("hallucination_count", value=sum(hallucinated(r) for r in runs)))

    rem_cos, rem_wmd, note_cos, note_wmd = [], [], [], []
    for r in parsed:
        t = r.transcript.truth
        if r.parse.reminder is not None and t.reminder_description:
            _distances(r.parse.reminder.description, t.reminder_description, embedder, rem_cos, rem_wmd)
        note = (r.parse.record_fields or {}).get("note")
        if isinstance(note, str):
            _distances(note, t.note, embedder, note_cos, note_wmd)
    results += [
        _summary("reminder_cosine_distance", rem_cos),
        _summary("reminder_wmd", rem_wmd),
        _summary("note_cosine_distance", note_cos),
        _summary("note_wmd", note_wmd),
    ]

    traps = [r for r in runs if "reminder_trap" in r.transcript.tags]
    results.append(MetricResult("reminder_trap_false_positives", value=sum(1 for r in traps if r.parse is not None and r.parse.reminder is not None)))
    vague = [r for r in runs if "underspecified_time" in r.transcript.tags]
    results.append(MetricResult("underspecified_silent_events", value=sum(1 for r in vague if r.events and r.outcome.detail != "resolved by operator")))

    counts = Counter(r.outcome.disposition.value for r in runs)
    results.append(MetricResult("clarification_count", value=counts.get(Disposition.CLARIFICATION_REQUESTED.value, 0)))
    results.append(MetricResult("disposition_counts", value={d.value: counts.get(d.value, 0) for d in Disposition}))

    outcomes = [r.outcome for r in runs]
    E = cumulative_error(outcomes)
    T = [o.total_latency_ms for o in outcomes]
    results.append(MetricResult("cumulative_error_E", value=E))
    results.append(MetricResult("latency_mean_ms", value=math.fsum(T) / len(T) if T else None))
    results.append(MetricResult("latency_max_ms", value=max(T) if T else None))
    results.append(MetricResult("error_budget_ok", value=None if E is None else E <= settings.budget.delta))
    results.append(MetricResult("latency_budget_ok", value=None if not T else max(T) <= settings.budget.tau_ms))

    subjects = [r.record_id for r in store.records()] + [i.intent_id for i in store.intents()] + [e.event_id for e in store.events()]
    audited = {a.subject_id for a in store.audit_log()}
    results.append(_proportion("audit_completeness", sum(s in audited for s in subjects), len(subjects)))

    results += retrieval_metrics(store.records(), settings)
    return sorted(results, key=lambda m: m.metric)


def _distances(emitted: str, truth: str, embedder: HashingEmbedder, cos: list[float], dist: list[float]) -> None:
    try:
        cos.append(cosine_distance(embedder.embed(emitted), embedder.embed(truth)))
        dist.append(wmd(emitted, truth, embedder))
    except (ZeroVector, ValueError):
        pass


def retrieval_metrics(records: Sequence[CareRecord], settings: ReplaySettings) -> list[MetricResult]:
    out = []
    if records:
        retriever = Retriever(records, settings.retrieval)
        hits = sum(
            any(res.record_id == r.record_id for res in retriever.search(r.note, HYBRID, settings.retrieval_k))
            for r in records
        )
        out.append(_proportion("retrieval_standard_hit_rate", hits, len(records)))
    else:
        out.append(MetricResult("retrieval_standard_hit_rate", value=None))
    needle = needle_harness(settings.needle_routine, settings.seed, settings=settings.retrieval, k=settings.retrieval_k)
    out.append(MetricResult("needle_dense_rank_verbatim", value=needle.ranks["verbatim"]["dense"]))
    out.append(MetricResult("needle_sparse_rank_unique", value=needle.ranks["unique_term"]["sparse"]))
    out.append(MetricResult("needle_hybrid_rank_paraphrase", value=needle.ranks["paraphrase"]["hybrid"]))
    out.append(MetricResult("needle_unrelated_gated", value=needle.gated["unrelated"]))
    return out


def build_report(
    runs: Sequence[TranscriptRun],
    components: Components,
    corpus_size: int,
    settings: ReplaySettings = ReplaySettings(),
    faults: Sequence[str] = (),
) -> ReplayReport:
    runs = sorted(runs, key=lambda r: r.transcript.id)
    for r in runs:
        components.store.record_outcome(r.outcome)
    metrics = compute_metrics(runs, components.store, components.registries, corpus_size, settings)
    return ReplayReport([r.outcome for r in runs], metrics, settings.budget, corpus_size, [str(f) for f in faults])


def replay(
    transcripts: Sequence[Transcript],
    components: Components,
    settings: ReplaySettings = ReplaySettings(),
    faults: Sequence[FaultSpec | str] = (),
) -> ReplayReport:
    """Run every transcript, in id order, and assemble the report."""
    faults = [parse_fault(f) if isinstance(f, str) else f for f in faults]
    active = apply_faults(components, faults, settings.seed) if faults else components
    runs = [run_transcript(t, active) for t in sorted(transcripts, key=lambda t: t.id)]
    return build_report(runs, active, len(transcripts), settings, faults)
