# -*- coding: utf-8 -*-
"""Hit matching of detections against ground-truth nodules."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..detection.boxes import Box3
from ..detection.postprocess import Detection

TP, FP, ABSORBED = 1, 0, -1


@dataclass
class MatchResult:
    """Outcome of matching one volume; per-detection arrays follow input order."""

    gt_hit: np.ndarray  # (G,) bool
    status: np.ndarray  # (D,) TP, FP or ABSORBED
    gt_index: np.ndarray  # (D,) matched or absorbing gt, -1 for FP
    probabilities: np.ndarray  # (D,)

    @property
    def is_tp(self) -> np.ndarray:
        return self.status == TP

    @property
    def is_fp(self) -> np.ndarray:
        return self.status == FP

    @property
    def n_gt(self) -> int:
        return len(self.gt_hit)

    @property
    def n_fp(self) -> int:
        return int(np.sum(self.is_fp))


def match_detections(detections: Sequence[Detection], gts: Sequence[Box3]) -> MatchResult:
    """Greedy centre-in-nodule matching.

    Detections are visited by descending probability (ties by lower box
    coordinates). A detection whose centre lies within gt.d/2 of an unhit
    gt hits the nearest such gt; if it only lies inside already-hit gts it
    is absorbed (neither TP nor FP); otherwise it is a false positive.

    Args:
        detections: Detections of one volume
        gts: Ground-truth nodules in the same frame

    Returns:
        MatchResult
    """
    n_det, n_gt = len(detections), len(gts)
    gt_hit = np.zeros(n_gt, dtype=bool)
    status = np.full(n_det, FP, dtype=np.int8)
    gt_index = np.full(n_det, -1, dtype=np.int64)
    probabilities = np.array([d.probability for d in detections], dtype=np.float64)
    if n_det == 0 or n_gt == 0:
        return MatchResult(gt_hit, status, gt_index, probabilities)

    det_centers = np.array([d.box.center for d in detections])
    gt_centers = np.array([g.center for g in gts])
    radii = np.array([g.d / 2.0 for g in gts])
    distances = np.linalg.norm(det_centers[:, None, :] - gt_centers[None, :, :], axis=2)
    inside = distances <= radii[None, :]

    order = sorted(range(n_det), key=lambda i: detections[i].sort_key())
    for i in order:
        candidates = np.flatnonzero(inside[i])
        if len(candidates) == 0:
            continue
        fresh = candidates[~gt_hit[candidates]]
        pool = fresh if len(fresh) else candidates
        j = int(pool[np.argmin(distances[i, pool])])
        gt_index[i] = j
        if len(fresh):
            gt_hit[j] = True
            status[i] = TP
        else:
            status[i] = ABSORBED
    return MatchResult(gt_hit, status, gt_index, probabilities)
