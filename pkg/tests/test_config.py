from __future__ import annotations

import json

import pytest

from carepipe.config import ConfigError, load_config


def test_defaults():
    cfg = load_config(environ={})
    assert (cfg.fuzzy_threshold, cfg.gate_threshold, cfg.rrf_k, cfg.tau_ms) == (0.8, 0.7, 60, 2000.0)
    assert not cfg.explicit("seed")


def test_precedence_flag_env_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "k1": 1.5, "delta": 0.1}))
    cfg = load_config(path, {"seed": 3, "k1": None}, {"CAREPIPE_SEED": "2", "CAREPIPE_K1": "1.4"})
    assert cfg.seed == 3 and cfg.sources["seed"] == "flag"
    assert cfg.k1 == 1.4 and cfg.sources["k1"] == "env"
    assert cfg.delta == 0.1 and cfg.sources["delta"] == "file"
    assert cfg.explicit("seed")


def test_coercion():
    cfg = load_config(environ={"CAREPIPE_CONFIRM_ON_FIRE": "yes", "CAREPIPE_CANONICAL_TIMES": '{"morning": "07:30"}'})
    assert cfg.confirm_on_fire is True and cfg.canonical_times == {"morning": "07:30"}
    assert cfg.time_settings().canonical_times["morning"] == "07:30"


def test_unknown_key_and_bad_values(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"no_such_key": 1}))
    with pytest.raises(ConfigError):
        load_config(path, environ={})
    for overrides in ({"fuzzy_threshold": 1.5}, {"rrf_k": 0}, {"timer": "sundial"}, {"seed": "abc"},
                      {"canonical_times": {"noon": "25:00"}}, {"confirm_on_fire": "maybe"}):
        with pytest.raises(ConfigError):
            load_config(overrides=overrides, environ={})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", environ={})


def test_unrelated_environment_is_ignored():
    assert load_config(environ={"CAREPIPE_CONFIG": "x.json", "HOME": "/"}).seed == 42
