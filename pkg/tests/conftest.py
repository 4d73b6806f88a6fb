from __future__ import annotations

from datetime import datetime
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from carepipe.model import UTC, bundled_corpus, default_registries
from carepipe.pipeline import Components, fixed_timer, replay

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

DATA = Path(__file__).parent / "data"


def utc(*args: int) -> datetime:
    return datetime(*args, tzinfo=UTC)


@pytest.fixture(scope="session")
def registries():
    return default_registries()


@pytest.fixture(scope="session")
def corpus():
    return bundled_corpus()


@pytest.fixture(scope="session")
def baseline_run(corpus):
    """Replay of the bundled corpus with the baseline parser and a frozen timer."""
    comps = Components.default(corpus.registries, timer=fixed_timer())
    report = replay(corpus.transcripts, comps)
    return report, comps


@pytest.fixture(scope="session")
def baseline_report(baseline_run):
    return baseline_run[0]


@pytest.fixture(scope="session")
def fault_report(corpus):
    comps = Components.default(corpus.registries, timer=fixed_timer())
    return replay(corpus.transcripts, comps, faults=["wrong_resident"])
