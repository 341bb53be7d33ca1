# -*- coding: utf-8 -*-
"""Free-response ROC over a set of scans."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import DataError
from ..utils.file_utils import write_csv
from .matching import MatchResult

FROC_RATES = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass
class FrocCurve:
    points: List[Tuple[float, float]]  # (fp per scan, sensitivity), fp ascending
    rates: Tuple[float, ...] = FROC_RATES
    sensitivities: List[float] = field(default_factory=list)

    @property
    def score(self) -> float:
        return float(np.mean(self.sensitivities))


def sensitivity_at(points: Sequence[Tuple[float, float]], rate: float) -> float:
    """Best sensitivity among operating points with FP/scan <= rate."""
    return max((s for fp, s in points if fp <= rate), default=0.0)


def froc(results: Sequence[MatchResult], rates: Sequence[float] = FROC_RATES) -> FrocCurve:
    """Sweep the detection threshold over every distinct probability.

    Thresholding at t keeps a probability-sorted prefix of each scan's
    detections, and greedy matching of a prefix equals the prefix of the
    full matching, so counts at every threshold come from one pass.

    Args:
        results: One MatchResult per scan
        rates: FP-per-scan operating points

    Returns:
        FrocCurve whose score is the mean sensitivity at ``rates``

    Raises:
        DataError: No scans or no ground-truth nodules
    """
    if len(results) == 0:
        raise DataError("FROC needs at least one scan")
    n_gt = sum(r.n_gt for r in results)
    if n_gt == 0:
        raise DataError("FROC sensitivity is undefined without ground-truth nodules")
    n_scans = len(results)

    probs = np.concatenate([r.probabilities for r in results] + [np.zeros(0)])
    status = np.concatenate([r.status for r in results] + [np.zeros(0, dtype=np.int8)])
    points = [(0.0, 0.0)]
    for t in np.unique(probs)[::-1]:
        kept = probs >= t
        tp = int(np.sum(kept & (status == 1)))
        fp = int(np.sum(kept & (status == 0)))
        points.append((fp / n_scans, tp / n_gt))
    points.sort()
    sensitivities = [sensitivity_at(points, rate) for rate in rates]
    return FrocCurve(points, tuple(rates), sensitivities)


def write_froc_curve(path: str, curve: FrocCurve):
    write_csv(path, pd.DataFrame(curve.points, columns=["fp_per_scan", "sensitivity"]))
