"""Tests for experiment configuration loading and overrides."""

import json

import pytest

from ble_tag_telemetry.common import InvalidArgumentError
from ble_tag_telemetry.config import (
    CONFIG_ENV,
    ExperimentConfig,
    default_config,
    load_config,
    merge_overrides,
    parse_config,
)


class TestParseConfig:
    """Test cases for parse_config and load_config."""

    def test_defaults(self):
        config = parse_config("{}")
        assert config == ExperimentConfig()
        assert config.setup.threshold == 192
        assert config.setup.squelch.threshold_db == -40.0
        assert config.range.pd_target == 0.9
        assert config.sweep.distance_m == 50.0

    def test_nested_document(self):
        doc = {"seed": 4, "setup": {"threshold": 200}, "range": {"trials": 10}}
        config = parse_config(json.dumps(doc))
        assert config.seed == 4
        assert config.setup.threshold == 200
        assert config.range.trials == 10

    def test_bare_link_budget_document(self):
        doc = {"budget": {"tx_power_dbm": 0.0}, "pattern": {"beamwidth_3db_deg": 40.0}}
        config = parse_config(json.dumps(doc))
        assert config.setup.budget.tx_power_dbm == 0.0
        assert config.setup.pattern.beamwidth_3db_deg == 40.0

    @pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"setup": {"threshold": 100}}'])
    def test_invalid(self, text):
        with pytest.raises(InvalidArgumentError):
            parse_config(text)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"max_cross": 180}))
        assert load_config(path).max_cross == 180


class TestDefaultConfig:
    """Test cases for default_config."""

    def test_builtin(self):
        assert default_config() == ExperimentConfig()

    def test_environment_file(self, tmp_path, monkeypatch):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"seed": 42}))
        monkeypatch.setenv(CONFIG_ENV, str(path))
        assert default_config().seed == 42


class TestOverrides:
    """Test cases for merge_overrides and sweep_config."""

    def test_flags_land_in_nested_fields(self):
        config = merge_overrides(
            ExperimentConfig(),
            threshold=210,
            squelch_db=-50.0,
            distance_m=80.0,
            trials=7,
            seed=None,
        )
        assert config.setup.threshold == 210
        assert config.setup.squelch.threshold_db == -50.0
        assert config.sweep.distance_m == 80.0
        assert config.range.trials == 7
        assert config.seed == 0

    def test_unknown_override(self):
        with pytest.raises(InvalidArgumentError):
            merge_overrides(ExperimentConfig(), colour="blue")

    def test_invalid_override(self):
        with pytest.raises(InvalidArgumentError):
            merge_overrides(ExperimentConfig(), threshold=300)

    def test_sweep_config_takes_shared_fields(self):
        config = merge_overrides(ExperimentConfig(), seed=5, threshold=220)
        sweep = config.sweep_config()
        assert sweep.rng_seed == 5
        assert sweep.setup.threshold == 220
