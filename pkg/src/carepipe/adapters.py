"""Adapter for parsers that run outside this process.

The external program receives one JSON object on standard input,
``{"transcript": ..., "overrides": ...}``, and prints one parse outcome in
the same object format :meth:`ParseOutcome.to_dict` produces. Run this module
directly (``python -m carepipe.adapters``) for a reference external parser
that wraps the baseline.
"""

from __future__ import annotations

import json
import subprocess
import sys
from collections.abc import Mapping, Sequence
from typing import Any

from .model import Registries, Transcript, default_registries
from .parser import ParseOutcome, RuleBasedParser


class AdapterError(RuntimeError):
    pass


def _overrides_to_json(overrides: Mapping[str, Any] | None) -> dict[str, Any]:
    out = {}
    for key, value in (overrides or {}).items():
        out[key] = value.to_dict() if hasattr(value, "to_dict") else value
    return out


class SubprocessParser:
    """Calls ``command`` once per transcript; the harness treats it like any parser."""

    def __init__(self, command: Sequence[str], timeout_s: float = 30.0):
        if not command:
            raise ValueError("command is empty")
        self.command = list(command)
        self.timeout_s = timeout_s

    def parse(self, transcript: Transcript, registries: Registries, overrides: Mapping[str, Any] | None = None) -> ParseOutcome:
        payload = json.dumps({"transcript": transcript.to_dict(), "overrides": _overrides_to_json(overrides)}, sort_keys=True)
        try:
            proc = subprocess.run(self.command, input=payload, capture_output=True, text=True, timeout=self.timeout_s, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AdapterError(f"external parser failed to run: {exc}") from exc
        if proc.returncode != 0:
            raise AdapterError(f"external parser exited {proc.returncode}: {proc.stderr.strip()[:500]}")
        try:
            return ParseOutcome.from_dict(json.loads(proc.stdout))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise AdapterError(f"external parser returned malformed output: {exc}") from exc


def _serve(stdin=sys.stdin, stdout=sys.stdout) -> int:
    request = json.loads(stdin.read())
    transcript = Transcript.from_dict(request["transcript"])
    # a schedule override arrives in mapping form, which the parser accepts
    overrides: dict[str, Any] = dict(request.get("overrides") or {})
    outcome = RuleBasedParser().parse(transcript, default_registries(), overrides)
    stdout.write(json.dumps(outcome.to_dict(), sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(_serve())
