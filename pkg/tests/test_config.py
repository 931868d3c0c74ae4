import pytest

from batdeg.config import ConfigError, RunConfig, config_from_dict, load_config


def test_defaults_validate():
    cfg = load_config(environ={})
    assert cfg == RunConfig()
    assert (cfg.features.K, cfg.features.D, cfg.features.N) == (7, 4, 50)
    assert cfg.protocol.cap == 16.0
    assert cfg.features.space().count() == 112_896


def test_toml_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[fleet]\nn_cells = 12\ntemperatures = [-10, 25]\n'
                 '[fleet.per_temperature."-10"]\nlow_temp_penalty = 0.03\n'
                 '[tasks]\nseeds = 4\nknee_mode = "max_slope"\n')
    cfg = load_config(p, environ={})
    assert cfg.fleet.n_cells == 12 and cfg.fleet.temperatures == (-10, 25)
    fc = cfg.fleet.fleet_config()
    assert fc.cell_overrides == {-10.0: {"low_temp_penalty": 0.03}}
    assert len(cfg.tasks.task_config().seeds) == 4
    assert cfg.tasks.knee_config().mode == "max_slope"


@pytest.mark.parametrize("raw,match", [
    ({"fleet": {"n_cell": 3}}, "unknown key"),
    ({"fleets": {}}, "unknown section"),
    ({"fleet": {"n_cells": "3"}}, "integer"),
    ({"fleet": {"n_cells": 0}}, "n_cells"),
    ({"features": {"K": 7, "N": 5}}, "N"),
    ({"fleet": {"per_temperature": {"25": {"bogus": 1}}}}, "bogus"),
    ({"tasks": {"knee_mode": "sideways"}}, "sideways"),
    ({"protocol": {"cap": True}}, "number"),
])
def test_invalid_configs_rejected(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw, environ={})


def test_malformed_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[fleet\nn_cells = 1\n")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(p)


def test_env_overrides_paths_only():
    env = {"BATDEG_PATH_WORKDIR": "/tmp/elsewhere", "BATDEG_PATH_FEATURES": "/tmp/f.csv",
           "BATDEG_FLEET_N_CELLS": "3"}
    cfg = config_from_dict({}, environ=env)
    assert str(cfg.paths.resolve("dataset")) == "/tmp/elsewhere/dataset"
    assert str(cfg.paths.resolve("features")) == "/tmp/f.csv"
    assert cfg.fleet.n_cells == 40


def test_with_seed_and_to_dict():
    cfg = RunConfig().with_seed(9)
    assert cfg.protocol.seed == cfg.fleet.seed == cfg.tasks.seed_start == 9
    d = cfg.to_dict()
    assert d["fleet"]["temperatures"] == list(RunConfig().fleet.temperatures)
    assert config_from_dict(d, environ={}) == cfg
