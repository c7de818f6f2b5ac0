import json
import logging
import os

import pytest

from config import (
    CampaignConfig,
    ConfigError,
    default_jobs,
    get_env_var,
    load_run_config,
    parse_override,
    write_resolved_config,
)
from data_pipeline import AugmentationConfig
from logging_config import set_log_level
from model_config import DEFAULT_PRESET, PRESETS


def write_config(tmp_path, payload):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload))
    return path


def test_default_preset_is_applied():
    config = load_run_config()
    assert config.preset == DEFAULT_PRESET == "desk"
    assert (config.training.ensemble_size, config.training.repetitions, config.training.folds) == (2, 1, 10)
    assert config.model.embedding_dim == 128
    assert config.generator.seed == 1


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_builds(name):
    assert load_run_config(preset=name).preset == name


def test_full_and_planted_presets():
    full = load_run_config(preset="full")
    assert (full.training.ensemble_size, full.training.repetitions) == (10, 3)
    planted = load_run_config(preset="planted")
    assert planted.generator.planted_sensors == [5, 16, 23]
    assert planted.campaign.planted_seeds == list(range(10))


def test_file_then_overrides_win(tmp_path):
    path = write_config(tmp_path, {"preset": "smoke", "training": {"folds": 4, "max_epochs": 9}})
    config = load_run_config(path)
    assert config.preset == "smoke"
    assert config.training.folds == 4
    assert config.training.max_epochs == 9
    assert config.model.conv_channels == [8, 16, 32, 32]

    config = load_run_config(path, ["training.max_epochs=12", "training.l1_target=attention_weights"])
    assert config.training.max_epochs == 12
    assert config.training.l1_target == "attention_weights"


def test_explicit_preset_beats_file_preset(tmp_path):
    path = write_config(tmp_path, {"preset": "smoke"})
    assert load_run_config(path, preset="reduced").training.max_epochs == 60


def test_nested_augmentation_override():
    config = load_run_config(overrides=["pipeline.augmentation.noise_fraction=0.2"])
    assert isinstance(config.pipeline.augmentation, AugmentationConfig)
    assert config.pipeline.augmentation.noise_fraction == 0.2
    assert config.pipeline.augmentation.target_multiplier == 1.5


@pytest.mark.parametrize(
    "override, named",
    [
        ("training.bogus=1", "training.bogus"),
        ("pipeline.augmentation.wobble=1", "pipeline.augmentation.wobble"),
        ("colour=1", "colour"),
    ],
)
def test_unknown_keys_are_named(override, named):
    with pytest.raises(ConfigError, match=f"unknown config key '{named}'"):
        load_run_config(overrides=[override])


def test_invalid_values_raise_config_error():
    with pytest.raises(ConfigError, match="invalid training config"):
        load_run_config(overrides=["training.batch_size=1"])
    with pytest.raises(ConfigError, match="invalid model config"):
        load_run_config(overrides=["model.attention_heads=3"])
    with pytest.raises(ConfigError, match="unknown preset"):
        load_run_config(preset="gigantic")


def test_bad_files_raise_config_error(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_run_config(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(broken)
    listed = write_config(tmp_path, [1, 2])
    with pytest.raises(ConfigError, match="JSON object"):
        load_run_config(listed)


def test_parse_override():
    assert parse_override("training.max_epochs=60") == ("training.max_epochs", 60)
    assert parse_override("campaign.m_list=[1,2]") == ("campaign.m_list", [1, 2])
    assert parse_override("log_level=debug") == ("log_level", "debug")
    assert parse_override("a.b=x=y") == ("a.b", "x=y")
    with pytest.raises(ConfigError):
        parse_override("training.max_epochs")
    with pytest.raises(ConfigError):
        parse_override("=3")


def test_write_resolved_config(tmp_path):
    config = load_run_config(overrides=["campaign.seed=7"])
    path = write_resolved_config(config, tmp_path / "out")
    stored = json.loads(path.read_text())
    assert stored["campaign"]["seed"] == 7
    assert stored["preset"] == "desk"
    assert stored["pipeline"]["augmentation"]["noise_fraction"] == 0.1


def test_jobs_from_environment(monkeypatch):
    monkeypatch.setenv("FRF_SHM_JOBS", "3")
    assert default_jobs() == 3
    assert CampaignConfig().resolved_jobs == 3
    assert CampaignConfig(jobs=2).resolved_jobs == 2
    monkeypatch.setenv("FRF_SHM_JOBS", "many")
    with pytest.raises(ConfigError):
        default_jobs()
    monkeypatch.setenv("FRF_SHM_JOBS", "0")
    with pytest.raises(ConfigError):
        default_jobs()
    monkeypatch.delenv("FRF_SHM_JOBS")
    assert default_jobs() == (os.cpu_count() or 1)


def test_get_env_var(monkeypatch):
    monkeypatch.delenv("FRF_SHM_UNSET_FOR_TEST", raising=False)
    assert get_env_var("FRF_SHM_UNSET_FOR_TEST", required=False) is None
    with pytest.raises(ConfigError, match="FRF_SHM_UNSET_FOR_TEST"):
        get_env_var("FRF_SHM_UNSET_FOR_TEST")


def test_campaign_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig(jobs=0)
    with pytest.raises(ValueError):
        CampaignConfig(subset_folds=1)
    with pytest.raises(ValueError, match="member_jobs"):
        CampaignConfig(member_jobs=0)
    assert load_run_config(overrides=["campaign.member_jobs=3"]).campaign.member_jobs == 3


def test_set_log_level():
    root = logging.getLogger()
    previous = root.level
    try:
        set_log_level("debug")
        assert root.level == logging.DEBUG
        set_log_level("WARN")
        assert root.level == logging.WARNING
        with pytest.raises(ValueError, match="Unknown log level"):
            set_log_level("verbose")
    finally:
        root.setLevel(previous)
