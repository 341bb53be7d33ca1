# -*- coding: utf-8 -*-
"""Classification and regression losses."""

from typing import Union

import numpy as np
from scipy.special import expit

from ..errors import DomainError
from .tensor import ArrayLike, Tensor, as_tensor


def bce_loss(
    logit: Union[Tensor, ArrayLike], label: ArrayLike, reduction: str = "mean"
) -> Tensor:
    """Binary cross entropy on logits, in the log-sum-exp form.

    max(z, 0) - z·y + log(1 + exp(-|z|)) never takes log 0, so the loss
    stays finite for any finite logit.

    Args:
        logit: Raw scores z
        label: Targets in {0, 1}, broadcastable to ``logit``
        reduction: ``mean`` or ``sum``

    Returns:
        Scalar loss tensor
    """
    z = as_tensor(logit)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), z.shape)
    if np.any((y != 0.0) & (y != 1.0)):
        raise DomainError("bce_loss labels must be 0 or 1")
    if reduction not in ("mean", "sum"):
        raise DomainError(f"Unknown reduction: {reduction}")

    zd = z.data
    values = np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd)))
    scale = 1.0 / max(zd.size, 1) if reduction == "mean" else 1.0

    def backward(g):
        return ((expit(zd) - y) * scale * g,)

    return Tensor.from_op(np.asarray(values.sum() * scale), (z,), backward, "bce")


def smooth_l1(
    pred: Union[Tensor, ArrayLike], target: ArrayLike, reduction: str = "sum"
) -> Tensor:
    """Smooth L1: 0.5·e² where |e| < 1, else |e| - 0.5, with e = pred - target.

    Args:
        pred: Predicted values (e.g. t vectors, coordinates on the last axis)
        target: Target values, broadcastable to ``pred``
        reduction: ``sum`` (over every element) or ``mean``

    Returns:
        Scalar loss tensor
    """
    p = as_tensor(pred)
    e = p.data - np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape)
    small = np.abs(e) < 1.0
    values = np.where(small, 0.5 * e * e, np.abs(e) - 0.5)
    if reduction not in ("mean", "sum"):
        raise DomainError(f"Unknown reduction: {reduction}")
    scale = 1.0 / max(e.size, 1) if reduction == "mean" else 1.0

    def backward(g):
        return (np.where(small, e, np.sign(e)) * scale * g,)

    return Tensor.from_op(
        np.asarray(values.sum() * scale), (p,), backward, "smooth_l1"
    )
