# -*- coding: utf-8 -*-
"""Classifier training on 32³ crops with pad/crop/flip/zero-patch augmentation."""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..config.settings import PipelineConfig
from ..core.checkpoint import save_module
from ..core.losses import bce_loss
from ..core.optim import SGD, lr_schedule
from ..core.tensor import Tensor
from ..data.augment import augment_classification
from ..errors import DataError, DimensionError, NumericError
from ..network.classifier import Classifier, build_classifier
from ..utils.file_utils import write_csv

logger = logging.getLogger(__name__)


@dataclass
class ClassifierTrainingResult:
    net: Classifier
    mean: float
    std: float
    loss_curve: List[Dict[str, float]] = field(default_factory=list)
    checkpoint: Optional[str] = None


def train_classifier(
    crops: np.ndarray,
    labels: np.ndarray,
    config: Optional[PipelineConfig] = None,
    out_dir: Optional[str] = None,
    net: Optional[Classifier] = None,
) -> ClassifierTrainingResult:
    """Train the nodule classifier with BCE and the classifier schedule.

    The voxel mean and standard deviation of the training crops are stored
    in the network (and therefore in its checkpoint).

    Args:
        crops: (N, E, E, E) raw crops
        labels: (N,) binary labels
        config: Pipeline configuration (classifier section drives training)
        out_dir: Where ``classifier.dlt`` and ``classifier_loss.csv`` go
        net: Network to train (built from config if None)

    Returns:
        ClassifierTrainingResult

    Raises:
        DataError: Fewer than two classes present
        NumericError: Loss became NaN or infinite
    """
    config = config or PipelineConfig.default()
    cls_config, volcore = config.classifier, config.volcore
    crops = np.asarray(crops, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(crops) != len(labels):
        raise DimensionError(f"{len(crops)} crops for {len(labels)} labels")
    if len(np.unique(labels)) < 2:
        raise DataError("classifier training needs both benign and malignant crops")

    net = net or build_classifier(config)
    mean, std = float(crops.mean()), float(crops.std())
    net.set_normalization(mean, std)
    net.train()
    optimizer = SGD(net.parameters(), volcore.momentum, volcore.weight_decay)
    rng = np.random.default_rng([volcore.seed, 4])
    result = ClassifierTrainingResult(net, mean, float(net.norm_std[0]))

    epochs = tqdm(range(cls_config.epochs), desc="classifier", disable=not config.progress)
    for epoch in epochs:
        lr = lr_schedule(epoch, "classifier", cls_config.epochs, cls_config.base_lr)
        order = rng.permutation(len(crops))
        total, steps = 0.0, 0
        for start in range(0, len(order), cls_config.batch_size):
            batch = order[start : start + cls_config.batch_size]
            inputs = np.stack(
                [
                    augment_classification(crops[i], rng, mean, result.std, cls_config)
                    for i in batch
                ]
            )
            logits, _ = net(Tensor(inputs[:, None]))
            loss = bce_loss(logits, labels[batch])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"classifier loss diverged at epoch {epoch} (lr={lr})")
            optimizer.zero_grad()
            loss.backward()
            if lr > 0:
                optimizer.step(lr)
            total += value
            steps += 1
        result.loss_curve.append({"epoch": epoch, "loss": total / max(steps, 1)})
        epochs.set_postfix(loss=f"{total / max(steps, 1):.4f}", lr=lr)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        result.checkpoint = os.path.join(out_dir, "classifier.dlt")
        save_module(result.checkpoint, net)
        write_csv(
            os.path.join(out_dir, "classifier_loss.csv"),
            pd.DataFrame(result.loss_curve, columns=["epoch", "loss"]),
        )
    logger.info(f"✓ Classifier trained for {cls_config.epochs} epochs on {len(crops)} crops")
    return result
