# -*- coding: utf-8 -*-
"""Fused nodule features: deep features, detected size and raw 16³ pixels."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..data.annotations import AnnotationRecord, Consensus, voxel_box
from ..data.volume import Volume
from ..detection.boxes import Box3
from ..errors import DataError, DimensionError
from ..network.classifier import Classifier, classify_batch
from ..utils.file_utils import read_csv, write_csv
from .crops import NoduleCrop, crop_patch

logger = logging.getLogger(__name__)

DEEP_DIM = 2560
PIXEL_EXTENT = 16
PIXEL_DIM = PIXEL_EXTENT**3
ID_COLUMNS = ["series_id", "nodule_id"]


@dataclass
class FusedFeature:
    """[deep | size | pixels] split of one fused vector."""

    deep: np.ndarray
    size: float
    pixels: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.deep, [self.size], self.pixels])

    @classmethod
    def split(cls, vector: Sequence[float], deep_dim: int = DEEP_DIM) -> "FusedFeature":
        vector = np.asarray(vector, dtype=np.float64)
        if len(vector) != deep_dim + 1 + PIXEL_DIM:
            raise DimensionError(f"fused vector of length {len(vector)} does not fit deep_dim={deep_dim}")
        return cls(vector[:deep_dim], float(vector[deep_dim]), vector[deep_dim + 1 :])


def assemble_features(
    deep: Sequence[float], d: float, crop16, deep_dim: int = DEEP_DIM
) -> np.ndarray:
    """Concatenate deep features, nodule size and the 16³ crop, in that order.

    Args:
        deep: Pooled classifier features
        d: Detected diameter in voxels
        crop16: NoduleCrop or array with 4,096 values
        deep_dim: Expected deep feature length

    Returns:
        Vector of length deep_dim + 1 + 4096

    Raises:
        DimensionError: If a component has the wrong length
    """
    deep = np.asarray(deep, dtype=np.float64).reshape(-1)
    pixels = np.asarray(crop16.voxels if isinstance(crop16, NoduleCrop) else crop16, dtype=np.float64)
    pixels = pixels.reshape(-1)
    size = np.asarray(d, dtype=np.float64).reshape(-1)
    if len(deep) != deep_dim:
        raise DimensionError(f"deep feature has length {len(deep)}, expected {deep_dim}")
    if len(size) != 1:
        raise DimensionError(f"size feature has length {len(size)}, expected 1")
    if len(pixels) != PIXEL_DIM:
        raise DimensionError(f"pixel feature has length {len(pixels)}, expected {PIXEL_DIM}")
    return FusedFeature(deep, float(size[0]), pixels).vector


def feature_columns_for(deep_dim: int) -> List[str]:
    return (
        ID_COLUMNS
        + [f"f{i}" for i in range(deep_dim)]
        + ["d"]
        + [f"p{i}" for i in range(PIXEL_DIM)]
        + ["label"]
    )


@dataclass
class FeatureTable:
    series_ids: List[str]
    nodule_ids: List[int]
    features: np.ndarray  # (N, deep_dim + 1 + 4096)
    labels: np.ndarray  # (N,), NaN where unknown
    deep_dim: int

    def __len__(self) -> int:
        return len(self.series_ids)

    def labelled(self) -> "FeatureTable":
        keep = ~np.isnan(self.labels)
        return FeatureTable(
            [s for s, k in zip(self.series_ids, keep) if k],
            [n for n, k in zip(self.nodule_ids, keep) if k],
            self.features[keep],
            self.labels[keep],
            self.deep_dim,
        )


def write_feature_table(path: str, table: FeatureTable):
    """Feature dump CSV: ids, f0..f{F-1}, d, p0..p4095, label."""
    frame = pd.DataFrame(table.features, columns=feature_columns_for(table.deep_dim)[2:-1])
    frame.insert(0, "nodule_id", table.nodule_ids)
    frame.insert(0, "series_id", table.series_ids)
    frame["label"] = table.labels
    write_csv(path, frame)


def read_feature_table(path: str) -> FeatureTable:
    frame = read_csv(path, ID_COLUMNS + ["d", "label"])
    deep_dim = sum(1 for c in frame.columns if c.startswith("f") and c[1:].isdigit())
    columns = feature_columns_for(deep_dim)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing {len(missing)} feature columns (first: {missing[0]})")
    return FeatureTable(
        [str(s) for s in frame["series_id"]],
        [int(n) for n in frame["nodule_id"]],
        frame[columns[2:-1]].to_numpy(dtype=np.float64),
        frame["label"].to_numpy(dtype=np.float64),
        deep_dim,
    )


def extract_features(
    volume,
    boxes: Sequence[Box3],
    net: Classifier,
    crop_extent: int = 32,
) -> Tuple[np.ndarray, np.ndarray]:
    """Classifier probabilities and fused feature vectors for boxes in one volume.

    Returns:
        (probabilities (N,), fused features (N, feature_dim + 1 + 4096))
    """
    if len(boxes) == 0:
        return np.zeros(0), np.zeros((0, net.feature_dim + 1 + PIXEL_DIM))
    crops = np.stack([crop_patch(volume, b, crop_extent).cube for b in boxes])
    probs, deep = classify_batch(crops, net)
    fused = np.stack(
        [
            assemble_features(f, b.d, crop_patch(volume, b, PIXEL_EXTENT), net.feature_dim)
            for f, b in zip(deep, boxes)
        ]
    )
    return probs, fused


def training_crops(
    volumes: Dict[str, Volume],
    records: Sequence[AnnotationRecord],
    extent: int = 32,
) -> Tuple[np.ndarray, np.ndarray, List[Box3]]:
    """Crops and binary labels of consensus-labelled nodules; excluded ones are skipped.

    Args:
        volumes: Preprocessed volumes keyed by series id
        records: Manifest records (series without a volume are skipped)
        extent: Crop edge

    Returns:
        (crops (N, E, E, E), labels (N,), voxel boxes)
    """
    crops, labels, boxes = [], [], []
    skipped = 0
    for record in records:
        label = record.consensus.label
        volume = volumes.get(record.series_id)
        if label == Consensus.EXCLUDED or volume is None:
            skipped += 1
            continue
        box = voxel_box(record, volume)
        crops.append(crop_patch(volume, box, extent).cube)
        labels.append(float(label == Consensus.POSITIVE))
        boxes.append(box)
    if skipped:
        logger.info(f"⚠ Skipped {skipped} nodules (excluded consensus or missing volume)")
    if not crops:
        raise DataError("no labelled nodules available for classification")
    return np.stack(crops), np.asarray(labels), boxes


def consensus_lookup(
    records: Sequence[AnnotationRecord], volumes: Dict[str, Volume]
) -> Dict[str, Tuple[List[Box3], List[Optional[int]]]]:
    """Per series: voxel gt boxes and their labels (None when excluded)."""
    out: Dict[str, Tuple[List[Box3], List[Optional[int]]]] = {}
    for record in records:
        volume = volumes.get(record.series_id)
        if volume is None:
            continue
        boxes, labels = out.setdefault(record.series_id, ([], []))
        boxes.append(voxel_box(record, volume))
        label = record.consensus.label
        labels.append(None if label == Consensus.EXCLUDED else int(label == Consensus.POSITIVE))
    return out
