# -*- coding: utf-8 -*-
"""Central finite-difference gradient checking."""

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_gradient(
    fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5
) -> np.ndarray:
    """Estimate d fn / d target by central differences, one element at a time."""
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = fn().item()
        flat[i] = original - h
        lower = fn().item()
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5
) -> float:
    """Compare backward() against central differences for every input.

    Args:
        fn: Zero-argument closure returning a scalar tensor built from ``inputs``
        inputs: Leaf tensors with ``requires_grad=True``
        h: Perturbation step

    Returns:
        Worst relative error over all inputs
    """
    for t in inputs:
        t.zero_grad()
    fn().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numeric_gradient(fn, t, h)))
    return worst
