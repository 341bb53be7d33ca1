# -*- coding: utf-8 -*-
"""
Test configuration presets, YAML overlays and update helpers.
"""

import os

import pytest
import yaml

from lung_dpn.config.settings import GbmConfig, PipelineConfig
from lung_dpn.errors import ConfigError


def write_yaml(tmp_path, name, content):
    path = os.path.join(tmp_path, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(content)
    return path


@pytest.mark.unit
class TestPresets:
    """Test the default and desk presets."""

    def test_default_values(self):
        """Test the full-size settings."""
        config = PipelineConfig.default()
        assert config.detector.input_extent == 96
        assert config.detector.anchor_scales == (5.0, 10.0, 20.0)
        assert config.classifier.n_blocks == 30
        assert sum(config.classifier.stage_blocks) == config.classifier.n_blocks
        assert config.classifier.feature_dim == 2560
        assert config.gbm == GbmConfig(n_trees=200, max_depth=3, shrinkage=0.1)

    def test_desk_values(self):
        """Test that the desk preset shrinks the networks consistently."""
        config = PipelineConfig.desk()
        assert config.detector.input_extent == 48
        assert config.postprocess.patch_extent == config.detector.input_extent
        assert sum(config.classifier.stage_blocks) == config.classifier.n_blocks == 10
        assert config.classifier.feature_dim == 256
        assert config.gbm.n_trees == 50
        assert config.data.resample is False

    def test_presets_are_independent(self):
        """Test that editing one instance leaves fresh presets untouched."""
        config = PipelineConfig.desk()
        config.detector.epochs = 1
        assert PipelineConfig.desk().detector.epochs == 37


@pytest.mark.unit
class TestYamlOverlay:
    """Test partial YAML files on top of a preset."""

    def test_partial_overlay(self, tmp_path):
        """Test that only the named keys change."""
        path = write_yaml(tmp_path, "c.yaml", "gbm:\n  n_trees: 7\ndetector:\n  anchor_scales: [4, 8]\n")
        config = PipelineConfig.from_yaml(path)
        assert config.gbm.n_trees == 7
        assert config.detector.anchor_scales == (4, 8)
        assert config.gbm.max_depth == 3

    def test_preset_key(self, tmp_path):
        """Test that a top-level preset selects the base."""
        path = write_yaml(tmp_path, "c.yaml", "preset: desk\nclassifier:\n  epochs: 3\n")
        config = PipelineConfig.from_yaml(path)
        assert config.detector.input_extent == 48
        assert config.classifier.epochs == 3

    def test_empty_file(self, tmp_path):
        """Test that an empty file keeps the base unchanged."""
        config = PipelineConfig.from_yaml(write_yaml(tmp_path, "empty.yaml", ""))
        assert config == PipelineConfig.default()

    @pytest.mark.parametrize(
        "content",
        [
            "gbm:\n  n_tress: 3\n",
            "detector: 5\n",
            "detector:\n  anchor_scales: 5\n",
            "detector:\n  flip_augment: 1\n",
            "gbm:\n  shrinkage: fast\n",
            "preset: huge\n",
            "- a\n- b\n",
        ],
        ids=["unknown-key", "not-mapping", "not-list", "not-bool", "not-numeric", "preset", "top-level-list"],
    )
    def test_invalid_files(self, tmp_path, content):
        """Test that malformed overlays raise ConfigError."""
        with pytest.raises(ConfigError):
            PipelineConfig.from_yaml(write_yaml(tmp_path, "bad.yaml", content))

    def test_dump_and_reload(self, tmp_path):
        """Test that a written schema reloads to an equal configuration."""
        config = PipelineConfig.desk().update_seed(5)
        path = os.path.join(tmp_path, "full.yaml")
        config.to_yaml(path)
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f)
        assert raw["detector"]["anchor_scales"] == [5.0, 10.0, 20.0]
        assert PipelineConfig.from_yaml(path) == config


@pytest.mark.unit
class TestUpdates:
    """Test the update helpers."""

    def test_update_seed(self):
        """Test that the seed reaches every seeded section."""
        config = PipelineConfig.default().update_seed(42)
        assert config.volcore.seed == 42
        assert config.gbm.seed == 42

    def test_update_detector_settings(self):
        """Test that None leaves a detector setting as it was."""
        config = PipelineConfig.default().update_detector_settings(arch="res18", epochs=3)
        assert (config.detector.arch, config.detector.epochs) == ("res18", 3)
        assert config.detector.base_lr == 0.01
        config.update_detector_settings(epochs=0)
        assert config.detector.epochs == 0

    def test_update_classifier_settings(self):
        """Test classifier epoch and learning rate updates."""
        config = PipelineConfig.default().update_classifier_settings(epochs=2, base_lr=0.5)
        assert (config.classifier.epochs, config.classifier.base_lr) == (2, 0.5)
