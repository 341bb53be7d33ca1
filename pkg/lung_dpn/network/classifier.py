# -*- coding: utf-8 -*-
"""Nodule classification DPN: 32³ crop in, logit and pooled deep feature out."""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from ..config.settings import ClassifierConfig, PipelineConfig, VolcoreConfig
from ..core.layers import ConvBnRelu, Linear, Module
from ..core.ops import global_avg_pool3d
from ..core.tensor import Tensor, no_grad
from ..errors import DimensionError, SpecError
from .blocks import build_dpn_stages

logger = logging.getLogger(__name__)


def stack_width(config: ClassifierConfig) -> int:
    """Channels leaving the last dual path stage: stem + sum(blocks * increment)."""
    return config.stem_channels + sum(
        n * d for n, d in zip(config.stage_blocks, config.stage_increments)
    )


class Classifier(Module):
    """Stem conv → staged dual path blocks → average pool → logit.

    The last stage is sized so its channel count is the feature dimension.
    The z-score statistics of the training crops live in the ``norm_mean`` /
    ``norm_std`` buffers so they travel with the checkpoint.
    """

    def __init__(self, config: ClassifierConfig, volcore: Optional[VolcoreConfig] = None):
        super().__init__()
        if sum(config.stage_blocks) != config.n_blocks:
            raise SpecError(
                f"stage blocks {config.stage_blocks} sum to {sum(config.stage_blocks)}, "
                f"config asks for {config.n_blocks}"
            )
        if config.feature_dim < 1:
            raise SpecError(f"feature dimension must be positive, got {config.feature_dim}")
        width = stack_width(config)
        if width != config.feature_dim:
            raise SpecError(
                f"dual path stages end at {width} channels "
                f"({config.stem_channels} + blocks {config.stage_blocks} × increments "
                f"{config.stage_increments}), config asks for {config.feature_dim} features"
            )
        volcore = volcore or VolcoreConfig()
        rng = np.random.default_rng([volcore.seed, 2])
        bn = dict(eps=volcore.bn_eps, momentum=volcore.bn_momentum)
        self.crop_extent = config.crop_extent

        self.stem = ConvBnRelu(
            1,
            config.stem_channels,
            3,
            rng,
            config.stem_stride,
            method=volcore.conv_method,
            **bn,
        )
        self.stages = build_dpn_stages(
            config.stem_channels,
            config.stage_blocks,
            config.stage_strides,
            config.stage_increments,
            config.stage_bottlenecks,
            rng,
            volcore,
        )
        self.feature_dim = self.stages[-1].out_channels
        self.output = Linear(self.feature_dim, 1, rng)
        self.register_buffer("norm_mean", np.zeros(1))
        self.register_buffer("norm_std", np.ones(1))

    def set_normalization(self, mean: float, std: float):
        self.norm_mean[...] = mean
        self.norm_std[...] = std if std > 0 else 1.0

    def normalize(self, voxels: np.ndarray) -> np.ndarray:
        return (np.asarray(voxels, dtype=np.float64) - self.norm_mean[0]) / self.norm_std[0]

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Return (logits (N,), pooled features (N, feature_dim)) for normalized x."""
        if x.ndim != 5 or x.shape[1] != 1:
            raise DimensionError(f"classifier expects (N, 1, D, H, W) input, got {x.shape}")
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
        features = global_avg_pool3d(h)
        logits = self.output(features).reshape(-1)
        return logits, features


def build_classifier(config: Optional[PipelineConfig] = None) -> Classifier:
    """Build the classifier and log its size.

    Args:
        config: Pipeline configuration (full-size default if None)

    Returns:
        Classifier in training mode
    """
    config = config or PipelineConfig.default()
    net = Classifier(config.classifier, config.volcore)
    logger.info(
        f"✓ Built classifier: {config.classifier.n_blocks} dual path blocks, "
        f"{net.feature_dim}-d pooled features, "
        f"{net.num_parameters():,} parameters"
    )
    return net


def classify_batch(voxels: np.ndarray, net: Classifier) -> Tuple[np.ndarray, np.ndarray]:
    """Probabilities (N,) and deep features (N, F) for raw crops (N, E, E, E).

    The network is switched to eval mode; crops are z-scored with the stored
    training statistics.
    """
    voxels = np.asarray(voxels, dtype=np.float64)
    if voxels.ndim == 3:
        voxels = voxels[None]
    net.eval()
    with no_grad():
        logits, features = net(Tensor(net.normalize(voxels)[:, None]))
    return expit(logits.data), features.data


def classify(crop, net: Classifier) -> Tuple[float, np.ndarray]:
    """Malignancy probability and deep feature vector of one ``NoduleCrop``."""
    probs, features = classify_batch(np.asarray(crop.voxels).reshape(crop.voxels.shape[-3:]), net)
    return float(probs[0]), features[0]
