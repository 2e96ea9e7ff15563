from pathlib import Path

import pytest

from app import config as config_module
from app.config import (
    apply_override,
    emit_config,
    get_settings,
    initialize_settings,
    load_experiment_config,
    parse_override_value,
)
from app.exceptions import ConfigError
from app.models import ExperimentConfig

DEFAULT_TOML = Path(__file__).resolve().parent.parent / "configs" / "default.toml"


def test_settings_must_be_initialized(monkeypatch):
    monkeypatch.setattr(config_module, "settings", None)
    with pytest.raises(RuntimeError, match="not initialized"):
        get_settings()


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setattr(config_module, "settings", None)
    monkeypatch.setenv("ABF_OUT", str(tmp_path / "results"))
    monkeypatch.setenv("ABF_THREADS", "4")
    monkeypatch.setenv("ABF_LOG_LEVEL", "debug")
    settings = initialize_settings()
    assert settings.out_root == tmp_path / "results"
    assert settings.threads == 4
    assert settings.log_level == "DEBUG"
    assert get_settings() is settings


@pytest.mark.parametrize("raw", ["many", "0", "-2"])
def test_bad_thread_count(monkeypatch, raw):
    monkeypatch.setenv("ABF_THREADS", raw)
    with pytest.raises(ConfigError, match="ABF_THREADS"):
        initialize_settings()


def test_default_file_matches_model_defaults():
    assert load_experiment_config(DEFAULT_TOML) == ExperimentConfig()


def test_emitted_config_round_trips(tmp_path):
    original = load_experiment_config(
        DEFAULT_TOML, ["simulation.n_steps=1234", "potential.extension=\"y\"", "potential.e=0.3", "seed=9"]
    )
    path = tmp_path / "config.json"
    path.write_text(emit_config(original))
    assert load_experiment_config(path) == original


def test_missing_config_file_names_the_path(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError, match="nope.toml"):
        load_experiment_config(missing)


def test_unparsable_config_file(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[grid\nnodes = 3\n")
    with pytest.raises(ConfigError, match="Could not parse"):
        load_experiment_config(path)


@pytest.mark.parametrize(
    "raw, expected",
    [("12", 12), ("1e-3", 1e-3), ("[0.4, 0.2]", [0.4, 0.2]), ("true", True), ("\"z_only\"", "z_only"), ("frozen", "frozen")],
)
def test_override_values_parse_as_toml(raw, expected):
    assert parse_override_value(raw) == expected


def test_override_key_resolution():
    data = {}
    apply_override(data, "simulation.n_steps=10")
    apply_override(data, "epsilon=0.1")
    apply_override(data, "seed=5")
    apply_override(data, "bias_mode=frozen")
    assert data == {"simulation": {"n_steps": 10, "bias_mode": "frozen"}, "kernel": {"epsilon": 0.1}, "seed": 5}


@pytest.mark.parametrize("override", ["epsilons=[0.1]", "not_a_field=1", "no_equals_sign", "=3"])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        apply_override({}, override)


def test_overrides_win_over_file_and_defaults():
    config = load_experiment_config(DEFAULT_TOML, ["n_steps=1000", "threads=3"], defaults={"threads": 8})
    assert config.simulation.n_steps == 1000
    assert config.threads == 3


def test_defaults_fill_unset_keys_only(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text("seed = 4\n")
    config = load_experiment_config(path, defaults={"threads": 6, "seed": 1})
    assert config.threads == 6
    assert config.seed == 4


@pytest.mark.parametrize(
    "override",
    [
        "verify.sobolev_p=[1.0]",
        "fixed_point.epsilons=[]",
        "fixed_point.epsilons=[0.2, 1.5]",
        "simulation.step=0.5",
        "grid.nodes=2",
        "potential.family=\"quartic\"",
        "simulation.observables=[\"tan_z\"]",
        "kernel.bandwidth=0.1",
    ],
)
def test_invalid_configs_are_config_errors(override):
    with pytest.raises(ConfigError):
        load_experiment_config(DEFAULT_TOML, [override])
