from __future__ import annotations

import pytest

from potloc.cli import demo_config_path
from potloc.config import SCHEMA_VERSION, ConfigError, PipelineConfig, apply_override


@pytest.mark.parametrize("path", [None, demo_config_path()])
def test_echo_is_idempotent(tmp_path, path):
    text = PipelineConfig.load(path).to_toml()
    (tmp_path / "echo.toml").write_text(text)
    again = PipelineConfig.load(tmp_path / "echo.toml")
    assert again.to_toml() == text and again == PipelineConfig.load(path)


def test_pyramid_settings_propagate():
    cfg = PipelineConfig.load(None, ["pyramid.sigma=3", "pyramid.levels=2"])
    assert cfg.proposal.sigma == 3 and cfg.backbone.sigma == 3 and cfg.backbone.levels == 2


def test_overrides_parse_toml_values():
    cfg = PipelineConfig.load(None, ["trainer.steps=7", "eval.tiou_thresholds=[0.5, 0.75]",
                                     "trainer.readout=table", "refine.default_duration=5"])
    assert cfg.trainer.steps == 7 and cfg.trainer.readout == "table"
    assert cfg.eval.tiou_thresholds == (0.5, 0.75) and cfg.refine.default_duration == 5.0


@pytest.mark.parametrize("item, where", [
    ("nosuch.key=1", "nosuch"),
    ("trainer.nosuch=1", "trainer.nosuch"),
    ("proposal.sigma=3", "proposal.sigma"),
    ("backbone.d_in=3", "backbone.d_in"),
    ("trainer.steps=1.5", "trainer.steps"),
    ("trainer.readout=bogus", "trainer.readout"),
    ("pyramid.sigma=1", "pyramid"),
])
def test_bad_values_name_their_location(item, where):
    with pytest.raises(ConfigError) as info:
        PipelineConfig.load(None, [item])
    assert info.value.where == where


def test_malformed_override():
    with pytest.raises(ConfigError):
        apply_override({}, "no_equals_sign")
    with pytest.raises(ConfigError):
        apply_override({}, "nodot=1")


def test_schema_version_checked():
    assert PipelineConfig.from_mapping({"schema_version": SCHEMA_VERSION}) == PipelineConfig()
    with pytest.raises(ConfigError):
        PipelineConfig.from_mapping({"schema_version": SCHEMA_VERSION + 1})


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[trainer\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)


def test_derived_keys_not_echoed():
    d = PipelineConfig().to_dict()
    assert "sigma" not in d["proposal"] and "d_in" not in d["backbone"]
    assert d["schema_version"] == SCHEMA_VERSION
