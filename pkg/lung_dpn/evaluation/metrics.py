# -*- coding: utf-8 -*-
"""Classification, agreement and patient-level metrics."""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..data.annotations import AnnotationRecord, Consensus, rater_verdicts
from ..detection.boxes import Box3
from ..detection.postprocess import Detection
from ..errors import DataError, DimensionError
from .matching import ABSORBED, match_detections

CUTOFF = 0.5
BORDERLINE_THRESHOLDS = (0.1, 0.2, 0.3, 0.4)
CANCER, NON_CANCER = "cancer", "non-cancer"


def _paired(preds: Sequence[float], labels: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(p) != len(y):
        raise DimensionError(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise DataError("metric inputs are empty")
    return p, y


def accuracy(preds: Sequence[float], labels: Sequence[float], cutoff: float = CUTOFF) -> float:
    """Fraction of predictions on the correct side of the cutoff (p > cutoff is positive)."""
    p, y = _paired(preds, labels)
    return float(np.mean((p > cutoff) == (y > cutoff)))


def cohen_kappa(a: Sequence[float], b: Sequence[float], cutoff: float = CUTOFF) -> float:
    """Chance-corrected agreement of two binary raters (inputs binarized at the cutoff).

    When expected agreement is 1 the score is 1 for perfect agreement and 0
    otherwise.
    """
    x, y = _paired(a, b)
    x, y = x > cutoff, y > cutoff
    p_o = float(np.mean(x == y))
    pa, pb = float(np.mean(x)), float(np.mean(y))
    p_e = pa * pb + (1.0 - pa) * (1.0 - pb)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def mean_log_likelihood(
    probs: Sequence[float], labels: Sequence[float], clamp: float = 1e-6
) -> float:
    """Mean log probability assigned to the observed label."""
    p, y = _paired(probs, labels)
    p = np.clip(p, clamp, 1.0 - clamp)
    return float(np.mean(np.where(y > 0.5, np.log(p), np.log1p(-p))))


def borderline_stats(
    probs: Sequence[float], thresholds: Sequence[float] = BORDERLINE_THRESHOLDS
) -> Dict[float, float]:
    """Percent of confident predictions (p < t or p > 1 - t) per threshold."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if len(p) == 0:
        return {float(t): 0.0 for t in thresholds}
    return {float(t): float(100.0 * np.mean((p < t) | (p > 1.0 - t))) for t in thresholds}


def patient_diagnosis(preds: Sequence[float], cutoff: float = CUTOFF) -> str:
    """A patient has cancer if any detected nodule is predicted positive."""
    return CANCER if any(p > cutoff for p in preds) else NON_CANCER


@dataclass
class TpFpSplit:
    """Counts behind the TP-set accuracy and the FP reduction rate."""

    n_tp: int = 0
    n_tp_correct: int = 0
    n_fp: int = 0
    n_fp_negative: int = 0

    def __add__(self, other: "TpFpSplit") -> "TpFpSplit":
        return TpFpSplit(
            self.n_tp + other.n_tp,
            self.n_tp_correct + other.n_tp_correct,
            self.n_fp + other.n_fp,
            self.n_fp_negative + other.n_fp_negative,
        )

    @property
    def tp_accuracy(self) -> Optional[float]:
        return self.n_tp_correct / self.n_tp if self.n_tp else None

    @property
    def fp_reduction(self) -> Optional[float]:
        return self.n_fp_negative / self.n_fp if self.n_fp else None


def tp_fp_split_eval(
    detections: Sequence[Detection],
    gts: Sequence[Box3],
    gt_labels: Sequence[Optional[int]],
    preds: Sequence[float],
    cutoff: float = CUTOFF,
) -> TpFpSplit:
    """Score a classifier separately on matched and unmatched detections.

    Detections that hit a gt form the TP set and are judged against that
    gt's consensus label; gts labelled None are skipped. Duplicates absorbed
    by an already-hit gt belong to neither set. False positives count as
    reduced when predicted negative.
    """
    if len(preds) != len(detections):
        raise DimensionError(f"{len(preds)} predictions for {len(detections)} detections")
    match = match_detections(detections, gts)
    split = TpFpSplit()
    for status, j, p in zip(match.status, match.gt_index, preds):
        positive = p > cutoff
        if status == ABSORBED:
            continue
        if j < 0:
            split.n_fp += 1
            split.n_fp_negative += int(not positive)
        elif gt_labels[j] is not None:
            split.n_tp += 1
            split.n_tp_correct += int(positive == bool(gt_labels[j]))
    return split


@dataclass
class RaterAgreement:
    rater: int
    n: int
    accuracy: Optional[float]
    kappa: Optional[float]


def rater_agreement(records: Sequence[AnnotationRecord], rater: int) -> RaterAgreement:
    """Accuracy and kappa of one rater's confident verdicts against consensus."""
    verdicts, truth = [], []
    for i, verdict in rater_verdicts(records, rater):
        label = records[i].consensus.label
        if label == Consensus.EXCLUDED:
            continue
        verdicts.append(float(verdict))
        truth.append(float(label == Consensus.POSITIVE))
    if not verdicts:
        return RaterAgreement(rater, 0, None, None)
    return RaterAgreement(
        rater, len(verdicts), accuracy(verdicts, truth), cohen_kappa(verdicts, truth)
    )
