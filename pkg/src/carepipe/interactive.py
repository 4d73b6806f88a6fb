"""Clarification loop: put each pending question to a person and resume.

Answers are one line each:

* ``resident=R07`` / ``category=medication`` for parser questions
  (``approve`` accepts a single suggested candidate),
* ``time=2025-03-02T09:00:00Z`` for an unresolved reminder time,
* ``approve`` / ``reject`` for a low-confidence reminder,
* ``skip`` to leave the transcript deferred.

Resume state is the list of answers consumed so far; resuming replays them
before reading new ones, which reproduces the run exactly.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Sequence
from pathlib import Path
from typing import IO, Any

from .model import CarepipeError, Disposition, PipelineOutcome, Transcript, parse_timestamp
from .parser import ClarificationRequest
from .pipeline import Components, ReplayReport, ReplaySettings, TranscriptRun, build_report, complete_schedule, run_transcript
from .scheduler import ConfirmationRequest


class AbortedByUser(CarepipeError):
    def __init__(self, message: str, resume_path: str | None = None):
        super().__init__(message)
        self.resume_path = resume_path


class Answers:
    """Answers from a script, then optionally a live stream."""

    def __init__(self, scripted: Iterable[str] = (), stream: IO[str] | None = None):
        self._scripted: Iterator[str] = iter([a.strip() for a in scripted if a.strip() and not a.lstrip().startswith("#")])
        self._stream = stream
        self.consumed: list[str] = []

    def next(self) -> str | None:
        answer = next(self._scripted, None)
        if answer is None and self._stream is not None:
            line = self._stream.readline()
            answer = line.strip() if line else None
        if answer is not None:
            self.consumed.append(answer)
        return answer


def load_resume(path: str | Path) -> list[str]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return list(data.get("answers", []))


def _describe(request: ClarificationRequest | ConfirmationRequest) -> str:
    if isinstance(request, ConfirmationRequest):
        return f"[{request.request_id}] {request.prompt}\n  answer: approve | reject | skip"
    lines = [f"[{request.request_id}] {request.prompt}"]
    if request.candidates:
        lines.append("  candidates: " + ", ".join(request.candidates))
    hint = "time=YYYY-MM-DDTHH:MM:SSZ" if request.field == "time" else f"{request.field}=<id>"
    lines.append(f"  answer: {hint} | skip" + (" | approve" if len(request.candidates) == 1 else ""))
    return "\n".join(lines)


def _resolve(run: TranscriptRun, answer: str, components: Components, overrides: dict[str, Any]) -> TranscriptRun:
    """Apply one answer; raises ValueError when the answer does not fit."""
    c = components
    t = run.transcript
    req = run.request
    now = t.spoken_at
    if isinstance(req, ConfirmationRequest):
        if answer not in ("approve", "reject"):
            raise ValueError("expected approve or reject")
        result = c.scheduler.confirm(req.request_id, answer, now)
        if result is None:
            stages = run.outcome.stages
            outcome = PipelineOutcome(t.id, stages, Disposition.REJECTED, "rejected by operator")
            return TranscriptRun(t, outcome, run.parse, run.record, [], None)
        return complete_schedule(run, result)

    key, _, value = answer.partition("=")
    if req.field == "time":
        if key != "time" or not value:
            raise ValueError("expected time=<timestamp>")
        result = c.scheduler.clarify(req.request_id, parse_timestamp(value.strip()), now)
        if isinstance(result, list):
            return complete_schedule(run, result)
        return TranscriptRun(t, run.outcome, run.parse, run.record, [], result)

    if answer == "approve" and len(req.candidates) == 1:
        key, value = req.field, req.candidates[0]
    if key != req.field or not value:
        raise ValueError(f"expected {req.field}=<id>")
    value = value.strip()
    known = c.registries.has_resident(value) if key == "resident" else c.registries.has_category(value)
    if not known:
        raise ValueError(f"unknown {key} id {value!r}")
    c.store.resolve_request(req.request_id, "clarified", "confirm", at=now, detail=f"{key}={value}")
    overrides[f"{key}_id"] = value
    return run_transcript(t, c, overrides=overrides)


def interactive_replay(
    transcripts: Sequence[Transcript],
    components: Components,
    answers: Answers,
    settings: ReplaySettings = ReplaySettings(),
    out: IO[str] | None = None,
    resume_path: str | Path | None = None,
) -> ReplayReport:
    runs = []
    for t in sorted(transcripts, key=lambda t: t.id):
        overrides: dict[str, Any] = {}
        run = run_transcript(t, components)
        while run.request is not None:
            if out is not None:
                out.write(f"{t.id}: {t.text}\n{_describe(run.request)}\n")
            answer = answers.next()
            if answer is None:
                saved = None
                if resume_path is not None:
                    Path(resume_path).write_text(json.dumps({"answers": answers.consumed, "stopped_at": t.id}, indent=2) + "\n", encoding="utf-8")
                    saved = str(resume_path)
                raise AbortedByUser(f"ran out of answers at {t.id}", saved)
            if answer == "skip":
                break
            try:
                run = _resolve(run, answer, components, overrides)
            except (ValueError, CarepipeError) as exc:
                if out is not None:
                    out.write(f"  not accepted: {exc}\n")
        runs.append(run)
    return build_report(runs, components, len(transcripts), settings)
