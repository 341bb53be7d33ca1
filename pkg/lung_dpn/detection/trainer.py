# -*- coding: utf-8 -*-
"""Detector training loop with augmentation, schedule, checkpoints and loss curve."""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..config.settings import PipelineConfig
from ..core.checkpoint import save_module
from ..core.optim import SGD, lr_schedule
from ..core.tensor import Tensor
from ..data.augment import apply_detection_draw, draw_detection
from ..errors import DataError, NumericError
from ..evaluation.matching import match_detections
from ..network.detector import Detector, build_detector
from ..utils.file_utils import write_csv
from .boxes import Box3, assign_targets, generate_anchors
from .loss import detector_loss
from .postprocess import detect_volume, detector_predict_fn

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "total", "cls", "reg"]


@dataclass
class TrainingSample:
    """A preprocessed (z, y, x) volume and its boxes in voxel coordinates."""

    voxels: np.ndarray
    boxes: List[Box3]
    series_id: str = ""


@dataclass
class DetectorTrainingResult:
    net: Detector
    loss_curve: List[Dict[str, float]] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    iterations: int = 0


def sample_window(
    voxels: np.ndarray, boxes: Sequence[Box3], extent: int, rng: np.random.Generator
) -> Tuple[np.ndarray, List[Box3]]:
    """Random extent³ window, centred on a random nodule when there is one.

    Volumes smaller than the window are zero-padded at the high end.
    """
    if voxels.shape == (extent,) * 3:
        return voxels, list(boxes)
    need = [max(e, extent) for e in voxels.shape]
    padded = np.zeros(need)
    padded[: voxels.shape[0], : voxels.shape[1], : voxels.shape[2]] = voxels
    limit = np.asarray(need[::-1]) - extent  # x, y, z
    if boxes:
        target = boxes[int(rng.integers(len(boxes)))]
        jitter = rng.integers(-extent // 4, extent // 4 + 1, size=3)
        start = np.clip(np.round(target.center).astype(np.int64) - extent // 2 + jitter, 0, limit)
    else:
        start = np.asarray([int(rng.integers(0, l + 1)) for l in limit])
    x0, y0, z0 = (int(v) for v in start)
    window = padded[z0 : z0 + extent, y0 : y0 + extent, x0 : x0 + extent]
    moved = [b.shifted((-x0, -y0, -z0)) for b in boxes]
    inside = [b for b in moved if all(0 <= v < extent for v in (b.x, b.y, b.z))]
    return window, inside


def write_loss_curve(path: str, rows: Sequence[Dict[str, float]]):
    write_csv(path, pd.DataFrame(list(rows), columns=LOSS_COLUMNS))


def train_detector(
    dataset: Sequence[TrainingSample],
    config: Optional[PipelineConfig] = None,
    out_dir: Optional[str] = None,
    net: Optional[Detector] = None,
) -> DetectorTrainingResult:
    """Train the anchor detector with SGD and the step schedule.

    Args:
        dataset: Training volumes with ground-truth boxes
        config: Pipeline configuration (detector section drives training)
        out_dir: Where checkpoints and ``detector_loss.csv`` go (None = keep in memory)
        net: Network to continue training (built from config if None)

    Returns:
        DetectorTrainingResult with the trained network and per-epoch losses

    Raises:
        DataError: Empty dataset
        NumericError: Loss became NaN or infinite
    """
    if len(dataset) == 0:
        raise DataError("detector training needs at least one volume")
    config = config or PipelineConfig.default()
    det, volcore = config.detector, config.volcore
    net = net or build_detector(det.arch, config=config)
    net.train()
    extent = det.input_extent
    anchors = generate_anchors(extent // det.output_stride, det.output_stride, det.anchor_scales)
    optimizer = SGD(net.parameters(), volcore.momentum, volcore.weight_decay)
    rng = np.random.default_rng([volcore.seed, 3])
    result = DetectorTrainingResult(net)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    epochs = tqdm(range(det.epochs), desc="detector", disable=not config.progress)
    for epoch in epochs:
        lr = lr_schedule(epoch, "detector", det.epochs, det.base_lr)
        order = rng.permutation(len(dataset))
        sums = np.zeros(3)
        steps = 0
        for start in range(0, len(order), det.batch_size):
            inputs, targets = [], []
            for index in order[start : start + det.batch_size]:
                sample = dataset[int(index)]
                voxels, boxes = sample_window(sample.voxels, sample.boxes, extent, rng)
                voxels, boxes = apply_detection_draw(voxels, boxes, draw_detection(rng, det))
                inputs.append(voxels)
                targets.append(assign_targets(anchors, boxes, det.positive_iou, det.negative_iou))

            loss = detector_loss(net(Tensor(np.stack(inputs)[:, None])), targets, det)
            value = loss.total.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"detector loss diverged at epoch {epoch}, iteration {result.iterations}: "
                    f"cls={loss.classification}, reg={loss.regression}, lr={lr}"
                )
            if not loss.no_samples:
                optimizer.zero_grad()
                loss.total.backward()
                if lr > 0:
                    optimizer.step(lr)
            sums += (value, loss.classification, loss.regression)
            steps += 1
            result.iterations += 1

        means = sums / max(steps, 1)
        result.loss_curve.append(
            {"epoch": epoch, "total": means[0], "cls": means[1], "reg": means[2]}
        )
        epochs.set_postfix(loss=f"{means[0]:.4f}", lr=lr)
        logger.debug(f"epoch {epoch}: loss {means[0]:.5f} (cls {means[1]:.5f}, reg {means[2]:.5f})")

        if out_dir and det.checkpoint_every and (epoch + 1) % det.checkpoint_every == 0:
            path = os.path.join(out_dir, f"detector_epoch{epoch + 1:04d}.dlt")
            save_module(path, net)
            result.checkpoints.append(path)

    if out_dir:
        path = os.path.join(out_dir, "detector.dlt")
        save_module(path, net)
        result.checkpoints.append(path)
        write_loss_curve(os.path.join(out_dir, "detector_loss.csv"), result.loss_curve)
    logger.info(
        f"✓ Detector trained: {result.iterations} iterations, "
        f"final loss {result.loss_curve[-1]['total'] if result.loss_curve else float('nan'):.4f}"
    )
    return result


@dataclass
class RecallReport:
    recall: float
    fp_per_volume: float
    n_gt: int


def recall_report(
    net: Detector, dataset: Sequence[TrainingSample], config: Optional[PipelineConfig] = None
) -> RecallReport:
    """Whole-volume recall and false positives per volume after threshold and NMS."""
    config = config or PipelineConfig.default()
    predict = detector_predict_fn(net)
    hits = n_gt = n_fp = 0
    for sample in dataset:
        match = match_detections(detect_volume(sample.voxels, predict, config), sample.boxes)
        hits += int(match.gt_hit.sum())
        n_gt += match.n_gt
        n_fp += match.n_fp
    report = RecallReport(hits / n_gt if n_gt else 0.0, n_fp / max(len(dataset), 1), n_gt)
    logger.info(
        f"Training recall {report.recall:.3f} at {report.fp_per_volume:.2f} FP/volume "
        f"({n_gt} nodules)"
    )
    return report
