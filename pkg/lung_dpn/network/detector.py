# -*- coding: utf-8 -*-
"""U-net-like 3D anchor detectors: DPN26 and the Res18 baseline."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from ..config.settings import DetectorConfig, PipelineConfig, VolcoreConfig
from ..core.layers import (
    Activation,
    BatchNorm3d,
    Conv3d,
    ConvBnRelu,
    ConvTranspose3d,
    Dropout,
    MaxPool3d,
    Module,
    Sequential,
)
from ..core.tensor import Tensor, concat
from ..errors import SpecError
from .blocks import (
    DualPathBlockSpec,
    build_dpn_stack,
    build_dpn_stages,
    build_residual_stage,
    ResidualBlock,
)

logger = logging.getLogger(__name__)

ENCODER_STRIDE = 16
ARCHITECTURES = ("dpn26", "res18")


@dataclass
class DetectorOutput:
    """Raw head output: A logit maps and 4A regression maps."""

    logits: Tensor  # (N, A, D', H', W')
    regression: Tensor  # (N, 4A, D', H', W'), channel a*4 + j

    @property
    def n_anchors(self) -> int:
        return self.logits.shape[1]

    @property
    def grid(self):
        return self.logits.shape[2:]

    def anchor_logits(self, sample: int) -> Tensor:
        """Flat (M,) logits of one sample in (scale, z, y, x) order."""
        return self.logits[sample].reshape(-1)

    def anchor_deltas(self, sample: int) -> Tensor:
        """Flat (M, 4) regression outputs of one sample in anchor order."""
        a = self.n_anchors
        gz, gy, gx = self.grid
        return (
            self.regression[sample]
            .reshape(a, 4, gz, gy, gx)
            .transpose(0, 2, 3, 4, 1)
            .reshape(-1, 4)
        )


class UpBlock(Module):
    """Deconvolution ×2, encoder skip concatenation, then a fusion block."""

    def __init__(self, upsample: Module, fuse: Module):
        super().__init__()
        self.upsample = upsample
        self.fuse = fuse

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.fuse(concat([self.upsample(x), skip], axis=1))


class Detector(Module):
    """Stem → four encoder stages (/16) → two up blocks (/4) → anchor head."""

    def __init__(
        self,
        arch: str,
        config: DetectorConfig,
        volcore: Optional[VolcoreConfig] = None,
    ):
        super().__init__()
        if arch not in ARCHITECTURES:
            raise SpecError(f"Unknown detector architecture: {arch}")
        volcore = volcore or VolcoreConfig()
        rng = np.random.default_rng(volcore.seed)
        bn = dict(eps=volcore.bn_eps, momentum=volcore.bn_momentum)
        method = volcore.conv_method
        self.arch = arch
        self.input_extent = config.input_extent
        self.n_anchors = len(config.anchor_scales)
        stem = config.stem_channels

        self.stem = Sequential(
            ConvBnRelu(1, stem, 3, rng, method=method, **bn),
            ConvBnRelu(stem, stem, 3, rng, method=method, **bn),
            MaxPool3d(2),
        )
        strides = (1, 2, 2, 2)
        if arch == "dpn26":
            self.stages = build_dpn_stages(
                stem,
                config.stage_blocks,
                strides,
                config.stage_increments,
                config.stage_bottlenecks,
                rng,
                volcore,
            )
            widths = [s.out_channels for s in self.stages]
        else:
            widths = list(config.res18_widths)
            inputs = [stem] + widths[:-1]
            self.stages = [
                build_residual_stage(c_in, c_out, n, s, rng, volcore)
                for c_in, c_out, n, s in zip(inputs, widths, config.stage_blocks, strides)
            ]

        self.ups: List[UpBlock] = []
        channels = widths[-1]
        for level, skip_channels in enumerate((widths[2], widths[1])):
            if arch == "dpn26":
                up_channels = config.decoder_channels[level]
                spec = DualPathBlockSpec(
                    up_channels + skip_channels,
                    config.decoder_increments[level],
                    config.decoder_bottlenecks[level],
                )
                fuse = build_dpn_stack(1, spec, rng, volcore=volcore)
                out_channels = fuse.out_channels
            else:
                up_channels = config.res18_decoder_widths[level]
                out_channels = up_channels
                fuse = ResidualBlock(up_channels + skip_channels, out_channels, rng, 1, volcore)
            upsample = Sequential(
                ConvTranspose3d(channels, up_channels, 2, rng, stride=2, bias=False),
                BatchNorm3d(up_channels, **bn),
                Activation("relu"),
            )
            self.ups.append(UpBlock(upsample, fuse))
            channels = out_channels

        self.head = Sequential(
            Dropout(config.dropout, np.random.default_rng([volcore.seed, 1])),
            Conv3d(channels, config.head_channels, 1, rng, method=method),
            Activation("relu"),
            Conv3d(config.head_channels, 5 * self.n_anchors, 1, rng, method=method),
        )

    def forward(self, x: Tensor) -> DetectorOutput:
        if x.ndim != 5 or x.shape[1] != 1:
            raise SpecError(f"detector expects (N, 1, D, H, W) input, got {x.shape}")
        if any(e % ENCODER_STRIDE for e in x.shape[2:]):
            raise SpecError(
                f"input extents {x.shape[2:]} must be divisible by {ENCODER_STRIDE}"
            )
        features = []
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
            features.append(h)
        h = self.ups[0](h, features[2])
        h = self.ups[1](h, features[1])
        out = self.head(h)
        a = self.n_anchors
        return DetectorOutput(out[:, :a], out[:, a:])


def build_detector(
    arch: str = "dpn26",
    input_extent: Optional[int] = None,
    config: Optional[PipelineConfig] = None,
) -> Detector:
    """Build a detector and log its trainable parameter count.

    Args:
        arch: ``dpn26`` or ``res18``
        input_extent: Cubic input extent (config value if None)
        config: Pipeline configuration (full-size default if None)

    Returns:
        Detector in training mode
    """
    config = config or PipelineConfig.default()
    detector_config = config.detector
    extent = input_extent if input_extent is not None else detector_config.input_extent
    if extent % ENCODER_STRIDE or extent % detector_config.output_stride:
        raise SpecError(
            f"input extent {extent} is not divisible by encoder stride {ENCODER_STRIDE}"
        )
    if detector_config.output_stride != 4:
        raise SpecError("the decoder restores resolution to output stride 4 only")
    if input_extent is not None and input_extent != detector_config.input_extent:
        detector_config = replace(detector_config, input_extent=input_extent)

    net = Detector(arch, detector_config, config.volcore)
    grid = extent // detector_config.output_stride
    logger.info(
        f"✓ Built {arch} detector: {net.num_parameters():,} parameters, "
        f"{extent}³ input → {grid}³ grid × {net.n_anchors} anchors"
    )
    return net


def count_parameters(arch: str, config: Optional[PipelineConfig] = None) -> int:
    return build_detector(arch, config=config or PipelineConfig.default()).num_parameters()


def compare_parameter_counts(config: Optional[PipelineConfig] = None) -> Dict[str, int]:
    """Trainable parameter counts of both architectures under one config."""
    config = config or PipelineConfig.default()
    counts = {arch: count_parameters(arch, config) for arch in ARCHITECTURES}
    logger.info(
        f"Parameter counts: dpn26 {counts['dpn26']:,} vs res18 {counts['res18']:,} "
        f"(ratio {counts['dpn26'] / counts['res18']:.3f})"
    )
    return counts
