import json

import pytest

from handfusion.config import RunConfig, config_from_json, load_config
from handfusion.errors import ConfigError


def test_defaults_validate():
    cfg = load_config()
    assert cfg.model.resolution == 192
    assert cfg.train.lr == 1e-4 and cfg.train.lr_drop_epoch == 30 and cfg.train.epochs == 80


def test_json_round_trip():
    cfg = RunConfig()
    cfg.fusion.ftn = False
    assert config_from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize("body", [
    {"train": {"lrr": 1e-3}},
    {"train": {"epochs": "10"}},
    {"fusion": {"ftn": 1}},
    {"points": {"radii": [0.1]}},
    {"fusion": {"mode": "stereo"}},
    {"model": {"resolution": 190}},
    {"train": {"lr": -1.0}},
    {"points": {"outlier_unit": "cm"}},
])
def test_bad_values_are_rejected(tmp_path, body):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(body))
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_merge_into_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"lr": 1e-3, "epochs": 5}}))
    cfg = load_config(path, {"train": {"epochs": 7}, "seed": 4})
    assert (cfg.train.lr, cfg.train.epochs, cfg.seed) == (1e-3, 7, 4)


def test_missing_paths_fail_validation(tmp_path):
    cfg = load_config(overrides={"paths": {"train_data": str(tmp_path / "nope")}})
    with pytest.raises(ConfigError):
        cfg.validate(check_paths=True)
    with pytest.raises(ConfigError):
        RunConfig().validate(check_paths=True)


def test_invalid_json_names_the_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{")
    with pytest.raises(ConfigError, match="c.json"):
        load_config(path)
