from __future__ import annotations

import sys

import pytest

from carepipe.adapters import AdapterError, SubprocessParser
from carepipe.parser import RuleBasedParser


def test_subprocess_parser_matches_baseline(corpus):
    external = SubprocessParser([sys.executable, "-m", "carepipe.adapters"])
    baseline = RuleBasedParser()
    for t in list(corpus.transcripts[:6]) + [next(t for t in corpus.transcripts if t.id == "T0077")]:
        assert external.parse(t, corpus.registries).to_dict() == baseline.parse(t, corpus.registries).to_dict()


def test_subprocess_overrides_pass_through(corpus):
    t = next(t for t in corpus.transcripts if t.id == "T0077")
    external = SubprocessParser([sys.executable, "-m", "carepipe.adapters"])
    out = external.parse(t, corpus.registries, {"resident_id": "R31"})
    assert out.to_dict() == RuleBasedParser().parse(t, corpus.registries, {"resident_id": "R31"}).to_dict()
    assert out.record_fields["resident_id"] == "R31"


def test_failing_commands(corpus):
    t = corpus.transcripts[0]
    with pytest.raises(AdapterError):
        SubprocessParser([sys.executable, "-c", "import sys; sys.exit(4)"]).parse(t, corpus.registries)
    with pytest.raises(AdapterError):
        SubprocessParser([sys.executable, "-c", "print('not json')"]).parse(t, corpus.registries)
    with pytest.raises(AdapterError):
        SubprocessParser(["/nonexistent/parser"]).parse(t, corpus.registries)
    with pytest.raises(ValueError):
        SubprocessParser([])
