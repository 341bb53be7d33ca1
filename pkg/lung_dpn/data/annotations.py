# -*- coding: utf-8 -*-
"""Nodule annotations: manifest CSV, consensus labels, folds and rater subsets."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..detection.boxes import Box3
from ..errors import DataError, DomainError
from ..utils.file_utils import read_csv, write_csv
from .volume import Volume, world_to_voxel

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["seriesuid", "coordX", "coordY", "coordZ", "diameter_mm"]
N_RATER_COLUMNS = 4


class Consensus(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class ConsensusResult:
    label: Consensus
    mean_score: Optional[float]
    reason: str = ""


@dataclass
class AnnotationRecord:
    """One annotated nodule; scores are per-rater malignancy 1-5 (0 = N/A)."""

    series_id: str
    world: Tuple[float, float, float]
    diameter_mm: float
    scores: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.diameter_mm > 0:
            raise DomainError(f"nodule diameter must be positive, got {self.diameter_mm}")
        self.scores = tuple(int(s) for s in self.scores)
        if any(s < 0 or s > 5 for s in self.scores):
            raise DomainError(f"malignancy scores must lie in 0..5, got {self.scores}")
        self.world = tuple(float(v) for v in self.world)

    @property
    def consensus(self) -> ConsensusResult:
        return consensus(self.scores)


def consensus(scores: Sequence[int]) -> ConsensusResult:
    """Average the nonzero scores: > 3 positive, < 3 negative, = 3 excluded."""
    rated = [s for s in scores if s != 0]
    if not rated:
        return ConsensusResult(Consensus.EXCLUDED, None, "no nonzero malignancy score")
    mean = float(np.mean(rated))
    if mean > 3:
        return ConsensusResult(Consensus.POSITIVE, mean)
    if mean < 3:
        return ConsensusResult(Consensus.NEGATIVE, mean)
    return ConsensusResult(Consensus.EXCLUDED, mean, "mean score is exactly 3")


def consensus_label(scores: Sequence[int]) -> Consensus:
    return consensus(scores).label


def rater_verdicts(
    records: Sequence[AnnotationRecord], rater: int
) -> List[Tuple[int, bool]]:
    """A rater's confident subset: (record index, malignant?) where the score is not 0 or 3."""
    out = []
    for i, record in enumerate(records):
        if rater >= len(record.scores):
            continue
        score = record.scores[rater]
        if score in (0, 3):
            continue
        out.append((i, score > 3))
    return out


def read_manifest(path: str) -> List[AnnotationRecord]:
    """Read a LUNA16-style annotation CSV with optional ``s1..s4`` score columns."""
    frame = read_csv(path, MANIFEST_COLUMNS)
    score_columns = [c for c in frame.columns if c.startswith("s") and c[1:].isdigit()]
    score_columns.sort(key=lambda c: int(c[1:]))
    records = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        records.append(
            AnnotationRecord(
                str(values["seriesuid"]),
                (values["coordX"], values["coordY"], values["coordZ"]),
                float(values["diameter_mm"]),
                tuple(int(values[c]) for c in score_columns),
            )
        )
    logger.debug(f"Read {len(records)} annotations from {path}")
    return records


def write_manifest(path: str, records: Sequence[AnnotationRecord]):
    n_scores = max([len(r.scores) for r in records] + [N_RATER_COLUMNS])
    score_columns = [f"s{i + 1}" for i in range(n_scores)]
    rows = [
        [r.series_id, *r.world, r.diameter_mm]
        + list(r.scores)
        + [0] * (n_scores - len(r.scores))
        for r in records
    ]
    write_csv(path, pd.DataFrame(rows, columns=MANIFEST_COLUMNS + score_columns))


def records_by_series(records: Sequence[AnnotationRecord]) -> Dict[str, List[AnnotationRecord]]:
    grouped: Dict[str, List[AnnotationRecord]] = {}
    for r in records:
        grouped.setdefault(r.series_id, []).append(r)
    return grouped


def voxel_box(record: AnnotationRecord, volume: Volume) -> Box3:
    """Annotation as a voxel-space box (diameter over the mean spacing)."""
    x, y, z = world_to_voxel(record.world, volume)
    return Box3(x, y, z, record.diameter_mm / float(np.mean(volume.spacing)))


def voxel_boxes_for_series(
    records: Sequence[AnnotationRecord], series_id: str, volume: Volume
) -> List[Box3]:
    return [voxel_box(r, volume) for r in records if r.series_id == series_id]


def kfold_split(series_ids: Sequence[str], n_folds: int = 10, seed: int = 0) -> List[List[str]]:
    """Patient-level folds: every series lands in exactly one fold.

    Args:
        series_ids: Series identifiers (duplicates collapse)
        n_folds: Number of folds
        seed: Shuffle seed

    Returns:
        ``n_folds`` lists of series ids
    """
    unique = sorted(set(series_ids))
    if n_folds < 2:
        raise DomainError(f"need at least 2 folds, got {n_folds}")
    if len(unique) < n_folds:
        raise DataError(f"{len(unique)} series cannot fill {n_folds} folds")
    order = np.random.default_rng(seed).permutation(len(unique))
    folds: List[List[str]] = [[] for _ in range(n_folds)]
    for position, index in enumerate(order):
        folds[position % n_folds].append(unique[index])
    return [sorted(f) for f in folds]
