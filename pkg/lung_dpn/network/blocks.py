# -*- coding: utf-8 -*-
"""Dual path blocks, residual blocks, and stack builders."""

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..config.settings import VolcoreConfig
from ..core.layers import (
    Activation,
    BatchNorm3d,
    Conv3d,
    ConvBnRelu,
    Module,
    Sequential,
)
from ..core.ops import activation
from ..core.tensor import Tensor, concat
from ..errors import SpecError


@dataclass
class DualPathBlockSpec:
    """Channel bookkeeping for one dual path block.

    The leading ``dense_increment`` channels of x are carried on the dense
    path, the remaining ``residual_width`` channels on the additive path.
    """

    in_channels: int
    dense_increment: int
    bottleneck_width: int
    stride: int = 1
    residual_width: Optional[int] = None

    def __post_init__(self):
        if self.dense_increment < 0:
            raise SpecError(f"dense increment must be >= 0, got {self.dense_increment}")
        if self.dense_increment > self.in_channels:
            raise SpecError(
                f"dense increment {self.dense_increment} exceeds "
                f"{self.in_channels} input channels"
            )
        if self.stride not in (1, 2):
            raise SpecError(f"block stride must be 1 or 2, got {self.stride}")
        expected = self.in_channels - self.dense_increment
        if self.residual_width is None:
            self.residual_width = expected
        elif self.residual_width != expected:
            raise SpecError(
                f"residual width {self.residual_width} != in_channels - d = {expected}"
            )

    @property
    def out_channels(self) -> int:
        return self.in_channels + self.dense_increment


def dual_path_forward(
    x: Tensor,
    spec: DualPathBlockSpec,
    residual_fn: Callable[[Tensor], Tensor],
    shortcut_fn: Optional[Callable[[Tensor], Tensor]] = None,
    g: str = "relu",
) -> Tensor:
    """y = G([x[:d], F(x)[:d], F(x)[d:] + x[d:]]).

    Args:
        x: Block input (N, in_channels, D, H, W)
        spec: Channel split of this block
        residual_fn: F; must return ``in_channels`` channels
        shortcut_fn: Projection of x for strided blocks (identity if None)
        g: Output activation kind

    Returns:
        Tensor with ``in_channels + d`` channels
    """
    if x.shape[1] != spec.in_channels:
        raise SpecError(
            f"block expects {spec.in_channels} channels, got {x.shape[1]}"
        )
    f = residual_fn(x)
    if f.shape[1] != spec.in_channels:
        raise SpecError(
            f"F produced {f.shape[1]} channels, block needs {spec.in_channels}"
        )
    skip = shortcut_fn(x) if shortcut_fn is not None else x
    if skip.shape != f.shape:
        raise SpecError(f"shortcut shape {skip.shape} does not match F {f.shape}")

    d = spec.dense_increment
    additive = f[:, d:] + skip[:, d:]
    if d == 0:
        return activation(additive, g)
    return activation(concat([skip[:, :d], f[:, :d], additive], axis=1), g)


class DualPathBlock(Module):
    """Bottleneck F (1³ → 3³ → 1³) wrapped in the dual path connection."""

    def __init__(
        self,
        spec: DualPathBlockSpec,
        rng: np.random.Generator,
        volcore: Optional[VolcoreConfig] = None,
        g: str = "relu",
    ):
        super().__init__()
        volcore = volcore or VolcoreConfig()
        bn = dict(eps=volcore.bn_eps, momentum=volcore.bn_momentum)
        c, b = spec.in_channels, spec.bottleneck_width
        self.spec = spec
        self.g = g
        self.residual = Sequential(
            ConvBnRelu(c, b, 1, rng, method=volcore.conv_method, **bn),
            ConvBnRelu(b, b, 3, rng, spec.stride, method=volcore.conv_method, **bn),
            Conv3d(b, c, 1, rng, bias=False, method=volcore.conv_method),
            BatchNorm3d(c, **bn),
        )
        self.projection = None
        if spec.stride != 1:
            self.projection = Sequential(
                Conv3d(c, c, 1, rng, spec.stride, bias=False, method=volcore.conv_method),
                BatchNorm3d(c, **bn),
            )

    @property
    def out_channels(self) -> int:
        return self.spec.out_channels

    def forward(self, x: Tensor) -> Tensor:
        return dual_path_forward(x, self.spec, self.residual, self.projection, self.g)


class DpnStack(Sequential):
    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels


def build_dpn_stack(
    n_blocks: int,
    base_spec: DualPathBlockSpec,
    rng: np.random.Generator,
    stage_strides: Optional[Sequence[int]] = None,
    volcore: Optional[VolcoreConfig] = None,
    g: str = "relu",
) -> DpnStack:
    """Chain blocks whose input width grows by d per block.

    Args:
        n_blocks: Number of blocks (>= 1)
        base_spec: Spec of the first block; d and bottleneck are reused
        rng: Weight initialization generator
        stage_strides: Per-block strides (all ``base_spec.stride`` then 1 if None)
        volcore: Normalization and convolution settings

    Returns:
        Sequential stack; block i sees ``base + i·d`` input channels
    """
    if n_blocks < 1:
        raise SpecError(f"a stack needs at least one block, got {n_blocks}")
    if stage_strides is None:
        stage_strides = [base_spec.stride] + [1] * (n_blocks - 1)
    if len(stage_strides) != n_blocks:
        raise SpecError(
            f"{len(stage_strides)} strides given for a stack of {n_blocks} blocks"
        )

    blocks: List[DualPathBlock] = []
    channels = base_spec.in_channels
    for stride in stage_strides:
        spec = replace(base_spec, in_channels=channels, stride=stride, residual_width=None)
        blocks.append(DualPathBlock(spec, rng, volcore, g))
        channels = spec.out_channels
    return DpnStack(*blocks)


def build_dpn_stages(
    in_channels: int,
    stage_blocks: Sequence[int],
    stage_strides: Sequence[int],
    increments: Sequence[int],
    bottlenecks: Sequence[int],
    rng: np.random.Generator,
    volcore: Optional[VolcoreConfig] = None,
) -> List[DpnStack]:
    """One ``build_dpn_stack`` per stage, striding only at each stage's first block."""
    lengths = {len(stage_blocks), len(stage_strides), len(increments), len(bottlenecks)}
    if len(lengths) != 1:
        raise SpecError("stage block, stride, increment and bottleneck lists differ in length")
    stages = []
    channels = in_channels
    for n, stride, d, b in zip(stage_blocks, stage_strides, increments, bottlenecks):
        base = DualPathBlockSpec(channels, d, b, stride)
        stack = build_dpn_stack(n, base, rng, [stride] + [1] * (n - 1), volcore)
        stages.append(stack)
        channels = stack.out_channels
    return stages


class ResidualBlock(Module):
    """Two 3³ convolutions with an identity or 1³ projection shortcut."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: int = 1,
        volcore: Optional[VolcoreConfig] = None,
    ):
        super().__init__()
        volcore = volcore or VolcoreConfig()
        bn = dict(eps=volcore.bn_eps, momentum=volcore.bn_momentum)
        self.out_channels = out_channels
        self.body = Sequential(
            ConvBnRelu(in_channels, out_channels, 3, rng, stride, method=volcore.conv_method, **bn),
            Conv3d(out_channels, out_channels, 3, rng, bias=False, method=volcore.conv_method),
            BatchNorm3d(out_channels, **bn),
        )
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Sequential(
                Conv3d(in_channels, out_channels, 1, rng, stride, bias=False, method=volcore.conv_method),
                BatchNorm3d(out_channels, **bn),
            )
        self.relu = Activation("relu")

    def forward(self, x: Tensor) -> Tensor:
        skip = self.shortcut(x) if self.shortcut is not None else x
        return self.relu(self.body(x) + skip)


def build_residual_stage(
    in_channels: int,
    out_channels: int,
    n_blocks: int,
    stride: int,
    rng: np.random.Generator,
    volcore: Optional[VolcoreConfig] = None,
) -> Sequential:
    blocks = [ResidualBlock(in_channels, out_channels, rng, stride, volcore)]
    blocks += [
        ResidualBlock(out_channels, out_channels, rng, 1, volcore)
        for _ in range(n_blocks - 1)
    ]
    return Sequential(*blocks)
