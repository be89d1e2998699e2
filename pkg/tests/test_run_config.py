"""
Tests for key=value run configuration parsing
"""

import pytest

from daflow.errors import ConfigError
from daflow.run_config import RunConfig, parse_overrides


class TestRunConfig:
    """File parsing, coercion and presets"""

    @pytest.fixture
    def config_file(self, tmp_path):
        path = tmp_path / 'run.txt'
        path.write_text(
            "# small run\n"
            "levels=2\n"
            "fpn_channels=4, 6\n"
            "image_height=16\n"
            "image_width=12\n"
            "\n"
            "lr=1e-3\n"
            "overfit=true\n"
            "difficulty=hard\n"
        )
        return path

    def test_values_are_coerced_to_field_types(self, config_file):
        config = RunConfig.from_file(config_file)
        assert config.levels == 2
        assert config.fpn_channels == [4, 6]
        assert config.lr == pytest.approx(1e-3)
        assert config.overfit is True
        assert config.difficulty == 'hard'
        assert config.samples == 6

    def test_overrides_win_over_file(self, config_file):
        config = RunConfig.from_file(config_file, {'samples': '3', 'overfit': 'no'})
        assert config.samples == 3 and config.overfit is False

    def test_unknown_key(self, config_file):
        with pytest.raises(ConfigError):
            RunConfig.from_file(config_file, {'sampels': '3'})

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({'levels': 'many'})
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({'overfit': 'maybe'})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.from_file(tmp_path / 'absent.txt')

    def test_indivisible_dims(self):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({'image_height': '250'})

    def test_text_form_reads_back(self, config_file, tmp_path):
        config = RunConfig.from_file(config_file)
        (tmp_path / 'copy.txt').write_text(config.to_text())
        assert RunConfig.from_file(tmp_path / 'copy.txt') == config

    def test_architecture_subset(self, config_file):
        arch = RunConfig.from_file(config_file).dafn_config()
        assert arch.levels == 2 and not hasattr(arch, 'lr')

    def test_with_overrides_leaves_original(self, config_file):
        config = RunConfig.from_file(config_file)
        other = config.with_overrides({'epochs': '3'})
        assert other.epochs == 3 and config.epochs == 200

    def test_preset(self):
        config = RunConfig.preset('baseline')
        assert (config.cascade, config.shallow_codec, config.samples) == (False, False, 1)
        with pytest.raises(ConfigError):
            RunConfig.preset('everything')

    def test_manifest_task_needs_root(self):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({'task': 'manifest'})


class TestParseOverrides:

    def test_pairs(self):
        assert parse_overrides(['lr=0.1', ' samples = 4 ']) == {'lr': '0.1', 'samples': '4'}
        assert parse_overrides(None) == {}

    def test_malformed(self):
        with pytest.raises(ConfigError):
            parse_overrides(['lr'])
