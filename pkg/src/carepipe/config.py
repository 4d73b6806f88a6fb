"""Layered configuration: defaults, then a JSON file, then ``CAREPIPE_*``
environment variables, then command-line flags."""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .parser import ParserSettings
from .pipeline import ReplaySettings, StageBudget
from .retrieval import RetrievalSettings
from .temporal import DEFAULT_CANONICAL_TIMES, TimeSettings

ENV_PREFIX = "CAREPIPE_"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    corpus: str | None = None
    residents: str | None = None
    categories: str | None = None
    store: str | None = None
    case: str | None = None
    fuzzy_threshold: float = 0.8
    tie_tolerance: float = 0.05
    gate_threshold: float = 0.7
    canonical_times: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CANONICAL_TIMES))
    default_recurrence_count: int = 7
    max_horizon_days: int = 31
    k1: float = 1.2
    b: float = 0.75
    rrf_k: int = 60
    dim: int = 256
    min_similarity: float = 0.3
    delta: float = 0.05
    tau_ms: float = 2000.0
    seed: int = 42
    needle_routine: int = 500
    confirm_on_fire: bool = False
    timer: str = "wall"
    sources: dict[str, str] = field(default_factory=dict, repr=False, compare=False)

    def explicit(self, key: str) -> bool:
        return self.sources.get(key, "default") != "default"

    def validate(self) -> Config:
        for key in ("fuzzy_threshold", "gate_threshold", "b"):
            if not 0 <= getattr(self, key) <= 1:
                raise ConfigError(f"{key} must lie in [0, 1]")
        if not 0 <= self.tie_tolerance < 1:
            raise ConfigError("tie_tolerance must lie in [0, 1)")
        if not -1 <= self.min_similarity <= 1:
            raise ConfigError("min_similarity must lie in [-1, 1]")
        for key in ("delta", "tau_ms", "rrf_k", "dim", "needle_routine", "max_horizon_days", "default_recurrence_count"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.k1 < 0:
            raise ConfigError("k1 must be non-negative")
        if self.timer not in ("wall", "fixed"):
            raise ConfigError("timer must be 'wall' or 'fixed'")
        for part, hhmm in self.canonical_times.items():
            try:
                hh, mm = (int(x) for x in str(hhmm).split(":"))
            except ValueError:
                raise ConfigError(f"canonical time for {part!r} is not HH:MM") from None
            if not (0 <= hh < 24 and 0 <= mm < 60):
                raise ConfigError(f"canonical time for {part!r} is out of range")
        return self

    # -- component settings --------------------------------------------------

    def time_settings(self) -> TimeSettings:
        return TimeSettings(dict(self.canonical_times), self.default_recurrence_count, self.max_horizon_days)

    def parser_settings(self) -> ParserSettings:
        return ParserSettings(self.fuzzy_threshold, self.tie_tolerance, self.gate_threshold, self.time_settings())

    def retrieval_settings(self) -> RetrievalSettings:
        return RetrievalSettings(self.k1, self.b, self.rrf_k, self.dim, self.min_similarity)

    def replay_settings(self) -> ReplaySettings:
        return ReplaySettings(StageBudget(self.delta, self.tau_ms), self.retrieval_settings(), self.seed, self.needle_routine)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "sources"}


_KEYS = {f.name: f for f in fields(Config) if f.name != "sources"}
_DEFAULTS = Config()


def _coerce(key: str, value: Any) -> Any:
    default = getattr(_DEFAULTS, key)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, dict):
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        if not isinstance(value, Mapping):
            raise ConfigError(f"{key}: expected an object")
        return {str(k): str(v) for k, v in value.items()}
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return None if value is None else str(value)


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    """Build a config; ``overrides`` are command-line values (``None`` means unset)."""
    environ = os.environ if environ is None else environ
    cfg = Config()
    cfg.sources = {k: "default" for k in _KEYS}

    def apply(values: Mapping[str, Any], source: str) -> None:
        for key, value in values.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r} ({source})")
            setattr(cfg, key, _coerce(key, value))
            cfg.sources[key] = source

    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be an object")
        apply(data, "file")
    apply({k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX) and k[len(ENV_PREFIX):].lower() in _KEYS}, "env")
    if overrides:
        apply({k: v for k, v in overrides.items() if v is not None}, "flag")
    return cfg.validate()
