# -*- coding: utf-8 -*-
"""Multi-task anchor loss: λ·BCE over sampled anchors + smooth L1 on positives."""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..config.settings import DetectorConfig
from ..core.losses import bce_loss, smooth_l1
from ..core.tensor import Tensor
from ..errors import DimensionError
from ..network.detector import DetectorOutput
from .boxes import TargetGrid

logger = logging.getLogger(__name__)


@dataclass
class DetectorLoss:
    """Total loss plus the breakdown reported in loss curves."""

    total: Tensor
    classification: float
    regression: float
    loss_lambda: float
    n_positive: int
    n_negative: int
    no_samples: bool = False


def mine_negatives(
    logits: np.ndarray, labels: np.ndarray, ratio: int, minimum: int
) -> np.ndarray:
    """Indices of the highest-scoring negatives, max(minimum, ratio·positives) of them.

    Ties keep anchor order (stable sort).
    """
    negatives = np.flatnonzero(labels == 0)
    n_pos = int(np.sum(labels == 1))
    wanted = min(len(negatives), max(minimum, ratio * n_pos))
    if wanted == 0:
        return negatives[:0]
    order = np.argsort(-logits[negatives], kind="stable")
    return negatives[order[:wanted]]


def detector_loss(
    output: DetectorOutput,
    targets: Sequence[TargetGrid],
    config: Optional[DetectorConfig] = None,
) -> DetectorLoss:
    """λ·L_cls + L_reg over a batch.

    L_cls is BCE averaged over positives and mined negatives of every sample;
    L_reg is smooth L1 summed over the four coordinates and averaged over
    positives.

    Args:
        output: Detector head output for N samples
        targets: One TargetGrid per sample, in anchor order
        config: Loss settings (λ, negative ratio, minimum negatives)

    Returns:
        DetectorLoss; ``no_samples`` is set and the total is 0 when nothing
        was sampled
    """
    config = config or DetectorConfig()
    n = output.logits.shape[0]
    if len(targets) != n:
        raise DimensionError(f"{len(targets)} target grids for a batch of {n}")
    m = int(np.prod(output.logits.shape[1:]))

    flat_logits = output.logits.reshape(-1)
    a = output.n_anchors
    gz, gy, gx = output.grid
    flat_deltas = (
        output.regression.reshape(n, a, 4, gz, gy, gx)
        .transpose(0, 1, 3, 4, 5, 2)
        .reshape(-1, 4)
    )

    cls_index, cls_label, pos_index, pos_target = [], [], [], []
    for i, grid in enumerate(targets):
        if len(grid) != m:
            raise DimensionError(
                f"target grid has {len(grid)} anchors, output has {m} per sample"
            )
        positives = np.flatnonzero(grid.labels == 1)
        negatives = mine_negatives(
            flat_logits.data[i * m : (i + 1) * m],
            grid.labels,
            config.negative_ratio,
            config.min_negatives,
        )
        cls_index += [positives + i * m, negatives + i * m]
        cls_label += [np.ones(len(positives)), np.zeros(len(negatives))]
        pos_index.append(positives + i * m)
        pos_target.append(grid.deltas[positives])

    cls_index = np.concatenate(cls_index).astype(np.int64)
    pos_index = np.concatenate(pos_index).astype(np.int64)
    n_pos = len(pos_index)
    lam = config.loss_lambda

    if len(cls_index) == 0:
        logger.warning("⚠ No anchors sampled for the detector loss; returning 0")
        return DetectorLoss(Tensor(0.0), 0.0, 0.0, lam, 0, 0, no_samples=True)

    cls = bce_loss(flat_logits.take(cls_index), np.concatenate(cls_label))
    total = cls * lam
    reg_value = 0.0
    if n_pos:
        rows = flat_deltas.take(pos_index[:, None] * 4 + np.arange(4))
        reg = smooth_l1(rows, np.concatenate(pos_target)) * (1.0 / n_pos)
        total = total + reg
        reg_value = reg.item()

    return DetectorLoss(
        total, cls.item(), reg_value, lam, n_pos, len(cls_index) - n_pos
    )
