# -*- coding: utf-8 -*-
"""Trainable layers and the module container they share."""

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import CheckpointError, DomainError
from .ops import (
    LayerParams,
    activation,
    batchnorm3d,
    conv3d,
    deconv3d,
    dropout,
    linear,
    pool3d,
)
from .tensor import Tensor, parameter


class Module:
    """Base class for anything holding parameters, buffers or submodules.

    Parameters are trainable ``Tensor`` attributes, buffers are plain
    arrays registered with ``register_buffer``, and submodules are
    ``Module`` attributes or lists of them. Traversal follows attribute
    assignment order, which fixes the checkpoint record order.
    """

    def __init__(self):
        self.training = True
        self._buffer_names: List[str] = []

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray):
        setattr(self, name, np.asarray(value, dtype=np.float64))
        if name not in self._buffer_names:
            self._buffer_names.append(name)

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        """Total count of trainable scalars."""
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Copy of every parameter and buffer keyed by dotted name."""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = np.array(b, copy=True)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """Overwrite parameters and buffers in place.

        Raises:
            CheckpointError: If a name is missing or a shape disagrees
        """
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, current in list(targets.items()) + list(buffers.items()):
            if name not in state:
                raise CheckpointError(f"Checkpoint is missing tensor {name}")
            current_data = current.data if isinstance(current, Tensor) else current
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != current_data.shape:
                raise CheckpointError(
                    f"Tensor {name} has shape {value.shape}, expected {current_data.shape}"
                )
            current_data[...] = value


def he_normal(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int
) -> np.ndarray:
    """Kaiming normal initialization for ReLU networks."""
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)


class Conv3d(Module):
    """Cubic-kernel 3D convolution (padding defaults to "same" for odd k)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        method: str = "direct",
    ):
        super().__init__()
        shape = (out_channels, in_channels, kernel, kernel, kernel)
        self.weight = parameter(he_normal(rng, shape, in_channels * kernel**3))
        self.bias = parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.method = method

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        params = LayerParams(self.weight, self.bias, self.stride, self.padding)
        return conv3d(x, params, self.method)


class ConvTranspose3d(Module):
    """Cubic-kernel transposed convolution, weights (C_in, C_out, k, k, k)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        super().__init__()
        shape = (in_channels, out_channels, kernel, kernel, kernel)
        fan_in = in_channels * kernel**3 // max(stride**3, 1)
        self.weight = parameter(he_normal(rng, shape, fan_in))
        self.bias = parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        params = LayerParams(self.weight, self.bias, self.stride, self.padding)
        return deconv3d(x, params)


class BatchNorm3d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.eps = eps
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm3d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.eps,
            self.momentum,
        )


class Dropout(Module):
    """Inverted dropout drawing masks from its own seeded generator."""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.training, self.rng)


class Activation(Module):
    def __init__(self, kind: str = "relu"):
        super().__init__()
        self.kind = kind

    def forward(self, x: Tensor) -> Tensor:
        return activation(x, self.kind)


class MaxPool3d(Module):
    def __init__(self, window: int = 2, stride: Optional[int] = None):
        super().__init__()
        self.window = window
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return pool3d(x, "max", self.window, self.stride)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = parameter(
            rng.normal(0.0, np.sqrt(1.0 / in_features), (out_features, in_features))
        )
        self.bias = parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class ConvBnRelu(Sequential):
    """conv → batch norm → ReLU, the unit every block is assembled from."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        eps: float = 1e-5,
        momentum: float = 0.1,
        method: str = "direct",
    ):
        super().__init__(
            Conv3d(
                in_channels, out_channels, kernel, rng, stride, bias=False, method=method
            ),
            BatchNorm3d(out_channels, eps, momentum),
            Activation("relu"),
        )
