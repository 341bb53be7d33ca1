# -*- coding: utf-8 -*-
"""Configuration settings for the nodule detection and diagnosis pipeline."""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, Optional, Tuple

import yaml

from ..errors import ConfigError


@dataclass
class VolcoreConfig:
    """Optimizer and normalization settings shared by both networks."""

    momentum: float = 0.9
    weight_decay: float = 1e-4
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    conv_method: str = "direct"  # "direct" or "im2col"
    seed: int = 0


@dataclass
class DetectorConfig:
    """Anchor detector architecture, targets and training schedule."""

    arch: str = "dpn26"  # "dpn26" or "res18"
    input_extent: int = 96
    output_stride: int = 4
    stem_channels: int = 24
    stage_blocks: Tuple[int, ...] = (2, 2, 2, 2)
    stage_increments: Tuple[int, ...] = (8, 16, 16, 24)
    stage_bottlenecks: Tuple[int, ...] = (24, 32, 48, 64)
    decoder_channels: Tuple[int, ...] = (64, 64)
    decoder_increments: Tuple[int, ...] = (16, 16)
    decoder_bottlenecks: Tuple[int, ...] = (64, 48)
    res18_widths: Tuple[int, ...] = (32, 64, 128, 128)
    res18_decoder_widths: Tuple[int, ...] = (128, 128)
    head_channels: int = 64
    dropout: float = 0.5

    anchor_scales: Tuple[float, ...] = (5.0, 10.0, 20.0)
    positive_iou: float = 0.5
    negative_iou: float = 0.02
    loss_lambda: float = 0.5
    negative_ratio: int = 2
    min_negatives: int = 2

    epochs: int = 150
    batch_size: int = 2
    base_lr: float = 0.01
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints
    flip_augment: bool = True
    scale_augment: bool = True
    scale_range: Tuple[float, float] = (0.75, 1.25)


@dataclass
class PostprocessConfig:
    """Whole-volume inference settings."""

    patch_extent: int = 96
    overlap: int = 32
    logit_threshold: float = -2.0
    nms_iou: float = 0.1
    fill_value: float = 0.0
    n_jobs: int = 1


@dataclass
class ClassifierConfig:
    """Nodule classification network and training schedule."""

    crop_extent: int = 32
    stem_channels: int = 64
    stem_stride: int = 1
    n_blocks: int = 30
    stage_blocks: Tuple[int, ...] = (4, 8, 12, 6)
    stage_strides: Tuple[int, ...] = (1, 2, 2, 2)
    stage_increments: Tuple[int, ...] = (24, 48, 96, 144)
    stage_bottlenecks: Tuple[int, ...] = (32, 64, 96, 128)
    # stem + sum(blocks * increments) must equal this
    feature_dim: int = 2560

    epochs: int = 1050
    batch_size: int = 8
    base_lr: float = 0.01
    pad_extent: int = 36
    zero_patch_extent: int = 4
    zero_patch_probability: float = 0.5
    flip_augment: bool = True


@dataclass
class GbmConfig:
    """Gradient boosting hyperparameters."""

    n_trees: int = 200
    max_depth: int = 3
    shrinkage: float = 0.1
    subsample: float = 1.0
    min_samples_leaf: int = 1
    seed: int = 0


@dataclass
class DataConfig:
    """Ingestion, preprocessing and synthetic data settings."""

    hu_min: float = -1200.0
    hu_max: float = 600.0
    resample: bool = True
    resample_spacing: float = 1.0
    synth_extent: int = 48
    synth_nodules_per_volume: Tuple[int, int] = (1, 2)
    synth_benign_diameter: Tuple[float, float] = (5.0, 9.0)
    synth_malignant_diameter: Tuple[float, float] = (8.0, 14.0)
    synth_malignant_fraction: float = 0.5
    synth_background_max: float = 0.3
    synth_max_retries: int = 200
    n_folds: int = 10


@dataclass
class EvalConfig:
    """Evaluation protocol constants."""

    froc_rates: Tuple[float, ...] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    borderline_thresholds: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4)
    probability_clamp: float = 1e-6
    cutoff: float = 0.5


@dataclass
class PipelineConfig:
    """Root configuration for the whole pipeline."""

    volcore: VolcoreConfig = field(default_factory=VolcoreConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    gbm: GbmConfig = field(default_factory=GbmConfig)
    data: DataConfig = field(default_factory=DataConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    progress: bool = True

    @classmethod
    def default(cls) -> "PipelineConfig":
        """Create the full-size configuration (96³ detector, 2,560-d features)."""
        return cls()

    @classmethod
    def desk(cls) -> "PipelineConfig":
        """Create the desk-scale configuration used by the test suite."""
        config = cls()
        config.detector = DetectorConfig(
            input_extent=48,
            stem_channels=12,
            stage_increments=(4, 8, 8, 12),
            stage_bottlenecks=(12, 16, 24, 32),
            decoder_channels=(32, 32),
            decoder_increments=(8, 8),
            decoder_bottlenecks=(32, 24),
            res18_widths=(16, 32, 64, 64),
            res18_decoder_widths=(64, 64),
            head_channels=32,
            epochs=37,
            batch_size=1,
        )
        config.postprocess = PostprocessConfig(patch_extent=48, overlap=16)
        config.classifier = ClassifierConfig(
            stem_channels=16,
            stem_stride=2,
            n_blocks=10,
            stage_blocks=(2, 3, 3, 2),
            stage_increments=(8, 24, 24, 40),
            stage_bottlenecks=(8, 16, 24, 32),
            feature_dim=256,
            epochs=80,
            base_lr=0.02,
        )
        config.gbm = GbmConfig(n_trees=50)
        config.data = DataConfig(resample=False)
        return config

    @classmethod
    def from_yaml(
        cls, path: str, base: Optional["PipelineConfig"] = None
    ) -> "PipelineConfig":
        """Load a (possibly partial) YAML config on top of a base config.

        Args:
            path: Path to a YAML file whose keys mirror the dataclass fields
            base: Configuration to overlay (full-size default if None)

        Returns:
            Merged configuration
        """
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must contain a mapping")

        config = base if base is not None else cls.default()
        # a top-level "preset" key selects the base before overlaying
        preset = raw.pop("preset", None)
        if preset == "desk":
            config = cls.desk()
        elif preset not in (None, "default"):
            raise ConfigError(f"Unknown preset: {preset}")
        _overlay(config, raw, "")
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Plain nested mapping of every setting (tuples become lists)."""
        return _listify(asdict(self))

    def to_yaml(self, path: str):
        """Write the full configuration schema to a YAML file.

        Args:
            path: Destination file
        """
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def update_seed(self, seed: int) -> "PipelineConfig":
        """Propagate one seed to every seeded component."""
        self.volcore.seed = seed
        self.gbm.seed = seed
        return self

    def update_detector_settings(
        self,
        arch: Optional[str] = None,
        epochs: Optional[int] = None,
        base_lr: Optional[float] = None,
    ) -> "PipelineConfig":
        """Update detector training settings."""
        if arch:
            self.detector.arch = arch
        if epochs is not None:
            self.detector.epochs = epochs
        if base_lr is not None:
            self.detector.base_lr = base_lr
        return self

    def update_classifier_settings(
        self, epochs: Optional[int] = None, base_lr: Optional[float] = None
    ) -> "PipelineConfig":
        """Update classifier training settings."""
        if epochs is not None:
            self.classifier.epochs = epochs
        if base_lr is not None:
            self.classifier.base_lr = base_lr
        return self


def _overlay(target: Any, values: Dict[str, Any], path: str):
    known = {f.name: f for f in fields(target)}
    for key, value in values.items():
        where = f"{path}{key}"
        if key not in known:
            raise ConfigError(f"Unknown config key: {where}")
        current = getattr(target, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"Config key {where} must be a mapping")
            _overlay(current, value, f"{where}.")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"Config key {where} must be a list")
            setattr(target, key, tuple(value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"Config key {where} must be true or false")
            setattr(target, key, value)
        elif isinstance(current, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"Config key {where} must be numeric")
        else:
            setattr(target, key, type(current)(value) if current is not None else value)


def _listify(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_listify(v) for v in value]
    return value
