# -*- coding: utf-8 -*-
"""Differentiable volumetric operations on (N, C, D, H, W) tensors."""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import DimensionError, DomainError
from .tensor import Tensor, as_tensor

Triple = Tuple[int, int, int]


@dataclass
class LayerParams:
    """Weights and hyperparameters of one convolution-like layer.

    Convolution weights are (C_out, C_in, kd, kh, kw); transposed
    convolution weights are (C_in, C_out, kd, kh, kw).
    """

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise DomainError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise DomainError(f"padding must be >= 0, got {self.padding}")
        if self.weight.ndim != 5 or min(self.weight.shape[2:]) < 1:
            raise DimensionError(
                f"expected a 5-D kernel with extents >= 1, got {self.weight.shape}"
            )

    @property
    def kernel(self) -> Triple:
        return tuple(self.weight.shape[2:])


# --------------------------------------------------------------------------- kernels
def _out_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


def _window(array: np.ndarray, offset: Triple, out: Triple, stride: int):
    kd, kh, kw = offset
    return array[
        :,
        :,
        kd : kd + stride * (out[0] - 1) + 1 : stride,
        kh : kh + stride * (out[1] - 1) + 1 : stride,
        kw : kw + stride * (out[2] - 1) + 1 : stride,
    ]


def correlate(xpad: np.ndarray, w: np.ndarray, stride: int, method: str = "direct"):
    """Valid cross-correlation of a padded input with (O, C, k, k, k) weights.

    ``direct`` accumulates one (O, C) contraction per kernel offset in a
    fixed order; ``im2col`` contracts a sliding-window view in one shot.
    """
    k = w.shape[2:]
    out = tuple(_out_extent(xpad.shape[2 + i], k[i], stride) for i in range(3))
    if method == "im2col":
        cols = sliding_window_view(xpad, k, axis=(2, 3, 4))
        cols = cols[:, :, :: stride, :: stride, :: stride][
            :, :, : out[0], : out[1], : out[2]
        ]
        result = np.tensordot(cols, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        return np.ascontiguousarray(np.moveaxis(result, -1, 1))
    if method != "direct":
        raise DomainError(f"Unknown convolution method: {method}")

    result = np.zeros((xpad.shape[0], w.shape[0]) + out)
    for offset in np.ndindex(*k):
        patch = _window(xpad, offset, out, stride)
        contrib = np.tensordot(w[(slice(None), slice(None)) + offset], patch, axes=([1], [1]))
        result += np.moveaxis(contrib, 0, 1)
    return result


def scatter(g: np.ndarray, w: np.ndarray, stride: int, full: Triple) -> np.ndarray:
    """Adjoint of ``correlate`` with respect to its input."""
    k = w.shape[2:]
    out = g.shape[2:]
    result = np.zeros((g.shape[0], w.shape[1]) + tuple(full))
    for offset in np.ndindex(*k):
        contrib = np.tensordot(g, w[(slice(None), slice(None)) + offset], axes=([1], [0]))
        _window(result, offset, out, stride)[...] += np.moveaxis(contrib, -1, 1)
    return result


def weight_gradient(xpad: np.ndarray, g: np.ndarray, kernel: Triple, stride: int):
    """Gradient of ``correlate`` with respect to its weights."""
    out = g.shape[2:]
    result = np.zeros((g.shape[1], xpad.shape[1]) + tuple(kernel))
    for offset in np.ndindex(*kernel):
        patch = _window(xpad, offset, out, stride)
        result[(slice(None), slice(None)) + offset] = np.tensordot(
            g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4])
        )
    return result


def _pad(a: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p), (p, p)), constant_values=value)


def _crop(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return a[:, :, p:-p, p:-p, p:-p]


def _check_5d(x: Tensor, name: str):
    if x.ndim != 5:
        raise DimensionError(f"{name} expects (N, C, D, H, W) input, got {x.shape}")


# --------------------------------------------------------------------------- layers
def conv3d(x: Tensor, params: LayerParams, method: str = "direct") -> Tensor:
    """3D convolution; output extent floor((D + 2p - k)/s) + 1 per axis.

    Args:
        x: Input tensor (N, C, D, H, W)
        params: Weights (C', C, k, k, k), optional bias (C',), stride, padding
        method: ``direct`` (offset loop) or ``im2col``

    Returns:
        Output tensor (N, C', D', H', W')
    """
    _check_5d(x, "conv3d")
    w, s, p = params.weight, params.stride, params.padding
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv3d input has {x.shape[1]} channels, kernel expects {w.shape[1]}"
        )
    for extent, k in zip(x.shape[2:], params.kernel):
        if extent + 2 * p < k:
            raise DimensionError(
                f"conv3d kernel {params.kernel} exceeds padded extent {x.shape[2:]}"
            )

    xpad = _pad(x.data, p)
    out = correlate(xpad, w.data, s, method)
    if params.bias is not None:
        out = out + params.bias.data.reshape(1, -1, 1, 1, 1)

    parents = (x, w) if params.bias is None else (x, w, params.bias)

    def backward(g):
        grad_x = (
            _crop(scatter(g, w.data, s, xpad.shape[2:]), p) if x.requires_grad else None
        )
        grad_w = weight_gradient(xpad, g, params.kernel, s)
        grads = [grad_x, grad_w]
        if params.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return Tensor.from_op(out, parents, backward, "conv3d")


def deconv3d(x: Tensor, params: LayerParams) -> Tensor:
    """Transposed 3D convolution; output extent (in - 1)·s - 2p + k.

    Args:
        x: Input tensor (N, C, D, H, W)
        params: Weights (C, C', k, k, k), optional bias (C',), stride, padding

    Returns:
        Output tensor (N, C', D', H', W')
    """
    _check_5d(x, "deconv3d")
    w, s, p = params.weight, params.stride, params.padding
    if x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"deconv3d input has {x.shape[1]} channels, kernel expects {w.shape[0]}"
        )
    full = tuple((n - 1) * s + k for n, k in zip(x.shape[2:], params.kernel))
    if min(f - 2 * p for f in full) < 1:
        raise DimensionError(
            f"deconv3d output extent would be {tuple(f - 2 * p for f in full)}"
        )

    out = _crop(scatter(x.data, w.data, s, full), p)
    if params.bias is not None:
        out = out + params.bias.data.reshape(1, -1, 1, 1, 1)

    parents = (x, w) if params.bias is None else (x, w, params.bias)

    def backward(g):
        gpad = _pad(g, p)
        grad_x = correlate(gpad, w.data, s) if x.requires_grad else None
        grad_w = weight_gradient(gpad, x.data, params.kernel, s)
        grads = [grad_x, grad_w]
        if params.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    return Tensor.from_op(out, parents, backward, "deconv3d")


def pool3d(
    x: Tensor,
    mode: str = "max",
    window: Union[int, Triple] = 2,
    stride: Optional[int] = None,
) -> Tensor:
    """Max or average pooling without padding.

    Max ties resolve to the lowest linear index inside the window, so the
    gradient is routed to exactly one voxel per output.
    """
    _check_5d(x, "pool3d")
    k = (window,) * 3 if isinstance(window, int) else tuple(window)
    s = stride if stride is not None else k[0]
    if any(kk > e for kk, e in zip(k, x.shape[2:])):
        raise DimensionError(f"pool window {k} exceeds extent {x.shape[2:]}")
    if mode not in ("max", "avg"):
        raise DomainError(f"Unknown pooling mode: {mode}")

    out = tuple(_out_extent(e, kk, s) for e, kk in zip(x.shape[2:], k))
    windows = sliding_window_view(x.data, k, axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
    windows = windows[:, :, : out[0], : out[1], : out[2]]
    flat = windows.reshape(windows.shape[:5] + (-1,))
    offsets = list(np.ndindex(*k))

    if mode == "max":
        argmax = np.argmax(flat, axis=-1)
        result = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    else:
        result = flat.mean(axis=-1)

    shape = x.shape

    def backward(g):
        grad = np.zeros(shape)
        for linear, offset in enumerate(offsets):
            if mode == "max":
                contrib = g * (argmax == linear)
            else:
                contrib = g / len(offsets)
            _window(grad, offset, out, s)[...] += contrib
        return (grad,)

    return Tensor.from_op(result, (x,), backward, f"{mode}pool3d")


def global_avg_pool3d(x: Tensor) -> Tensor:
    """Average over all spatial positions, returning (N, C)."""
    _check_5d(x, "global_avg_pool3d")
    return x.mean(axis=(2, 3, 4))


def activation(x: Tensor, kind: str = "relu") -> Tensor:
    """Elementwise ``relu``, ``sigmoid`` or ``identity``."""
    x = as_tensor(x)
    if kind == "relu":
        mask = x.data > 0
        return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")
    if kind == "sigmoid":
        out = expit(x.data)
        return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")
    if kind == "identity":
        return x
    raise DomainError(f"Unknown activation: {kind}")


def batchnorm3d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization followed by scale and shift.

    In training mode the batch statistics are used and the running buffers
    are updated in place; in eval mode the running buffers are used.
    """
    _check_5d(x, "batchnorm3d")
    axes = (0, 2, 3, 4)
    count = x.size // x.shape[1]
    view = (1, -1, 1, 1, 1)

    if training:
        if count < 2:
            raise DimensionError(
                f"batchnorm3d needs >= 2 values per channel in training, got {count}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean.reshape(view)) * inv_std.reshape(view)
    out = gamma.data.reshape(view) * x_hat + beta.data.reshape(view)

    def backward(g):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        g_hat = g * gamma.data.reshape(view)
        if training:
            grad_x = (
                inv_std.reshape(view)
                / count
                * (
                    count * g_hat
                    - g_hat.sum(axis=axes).reshape(view)
                    - x_hat * (g_hat * x_hat).sum(axis=axes).reshape(view)
                )
            )
        else:
            grad_x = g_hat * inv_std.reshape(view)
        return grad_x, grad_gamma, grad_beta

    return Tensor.from_op(out, (x, gamma, beta), backward, "batchnorm3d")


def dropout(
    x: Tensor,
    rate: float,
    training: bool,
    rng: Union[np.random.Generator, int, None] = None,
) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map of (N, F) rows with (F_out, F) weights."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear expects (N, {weight.shape[1]}) input, got {x.shape}"
        )
    out = x @ weight.transpose(1, 0)
    return out + bias.reshape(1, -1) if bias is not None else out
