"""Config parsing, layering, validation, and sidecar round-trips."""

import math

import pytest

from tabql.config import (
    ConfigError,
    build_config,
    load_config,
    read_flat_file,
    resolve_mapping,
    to_flat,
    write_sidecar,
)


def test_defaults_layering_env_specific():
    cfg = load_config(overrides={"env": "frozenlake4"})
    assert cfg.gate.T0 == 30000
    assert cfg.context_k == 1500
    cliff = load_config(overrides={"env": "cliffwalking"})
    assert cliff.gate.T0 == 20000
    assert cliff.context_k == 1000


def test_file_overrides_env_defaults(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment line\nenv=frozenlake4\ncontext_k=77\n\nseeds=1,2\n")
    cfg = load_config(str(p))
    assert cfg.context_k == 77
    assert cfg.seeds == (1, 2)
    assert cfg.gate.T0 == 30000  # untouched env default


def test_cli_overrides_beat_file(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("env=frozenlake4\ncontext_k=77\n")
    cfg = load_config(str(p), overrides={"context_k": "99"})
    assert cfg.context_k == 99


def test_validation_errors_enumerated_by_field():
    with pytest.raises(ConfigError) as exc:
        load_config(overrides={"gamma": "1.5", "total_steps": "0", "seeds": ""})
    errors = exc.value.errors
    assert set(errors) == {"gamma", "total_steps", "seeds"}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        load_config(overrides={"learning_rate": "0.1"})
    assert "learning_rate" in exc.value.errors


def test_gate_consistency_checks():
    with pytest.raises(ConfigError) as exc:
        load_config(overrides={"gate_gmin": "40", "gate_window": "30"})
    assert "gate_gmin" in exc.value.errors
    with pytest.raises(ConfigError):
        load_config(overrides={"eps_start": "0.1", "eps_end": "0.5"})


def test_malformed_line_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("env frozenlake4\n")
    with pytest.raises(ConfigError):
        read_flat_file(str(p))


def test_sidecar_roundtrip(tmp_path):
    cfg = load_config(overrides={"env": "taxi", "seeds": "3,4", "filter_tau": "0.1"})
    path = tmp_path / "side.config"
    write_sidecar(cfg, str(path))
    reloaded = load_config(str(path))
    assert to_flat(reloaded) == to_flat(cfg)


def test_inf_floor_roundtrip(tmp_path):
    cfg = load_config(overrides={"env": "cliffwalking"})
    assert cfg.gate.theta_floor == -math.inf
    path = tmp_path / "side.config"
    write_sidecar(cfg, str(path))
    assert load_config(str(path)).gate.theta_floor == -math.inf


def test_optional_floats_none():
    cfg = load_config(overrides={"filter_tau": "none", "filter_theta": "none"})
    assert cfg.filter_tau is None and cfg.filter_theta is None
    cfg2 = load_config(overrides={"filter_tau": "0.25"})
    assert cfg2.filter_tau == 0.25


def test_resolve_mapping_env_from_override():
    mapping = resolve_mapping({}, {"env": "taxi"})
    assert mapping["t0"] == "25000"
    cfg = build_config(mapping)
    assert cfg.env_id == "taxi"
