# -*- coding: utf-8 -*-
"""Cubic boxes, anchors, IoU, box encoding and anchor target assignment.

Coordinates are voxel positions of the array axes (x → W, y → H, z → D).
Anchors are enumerated in (scale, z, y, x) row-major order, the same order
in which detector head channels flatten.
"""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class Box3:
    """Cube centred at (x, y, z) with edge length d."""

    x: float
    y: float
    z: float
    d: float

    def __post_init__(self):
        if not self.d > 0:
            raise DomainError(f"box diameter must be positive, got {self.d}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.d], dtype=np.float64)

    def shifted(self, offset: Sequence[float]) -> "Box3":
        return Box3(self.x + offset[0], self.y + offset[1], self.z + offset[2], self.d)

    def sort_key(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.d)


@dataclass(frozen=True)
class Anchor:
    index: Tuple[int, int, int]  # grid cell (iz, iy, ix)
    scale: float
    box: Box3


class AnchorSet:
    """All anchors of one output grid, stored as arrays.

    Args:
        centers: (M, 3) anchor centres as (x, y, z)
        diameters: (M,) anchor scales
        cells: (M, 3) grid indices (iz, iy, ix)
    """

    def __init__(self, centers: np.ndarray, diameters: np.ndarray, cells: np.ndarray):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        self.diameters = np.asarray(diameters, dtype=np.float64).reshape(-1)
        self.cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.diameters)

    def __getitem__(self, i: int) -> Anchor:
        x, y, z = self.centers[i]
        d = float(self.diameters[i])
        return Anchor(tuple(int(v) for v in self.cells[i]), d, Box3(x, y, z, d))

    def __iter__(self) -> Iterator[Anchor]:
        for i in range(len(self)):
            yield self[i]

    def reflected(self, axis: int, extent: int) -> "AnchorSet":
        """Mirror anchor centres with c → extent - 1 - c along axis (0=x, 1=y, 2=z)."""
        centers = self.centers.copy()
        centers[:, axis] = extent - 1 - centers[:, axis]
        return AnchorSet(centers, self.diameters, self.cells)


def generate_anchors(
    grid: Union[int, Sequence[int]], stride: int, scales: Sequence[float]
) -> AnchorSet:
    """One anchor per (scale, cell) centred at (i + 0.5)·stride.

    Args:
        grid: Output grid extent, cubic int or (gz, gy, gx)
        stride: Voxels per output cell
        scales: Anchor diameters

    Returns:
        AnchorSet of A·gz·gy·gx anchors in (scale, z, y, x) order
    """
    if len(scales) == 0:
        raise DomainError("at least one anchor scale is required")
    gz, gy, gx = (grid,) * 3 if isinstance(grid, int) else tuple(grid)
    iz, iy, ix = np.meshgrid(np.arange(gz), np.arange(gy), np.arange(gx), indexing="ij")
    cells = np.stack([iz.ravel(), iy.ravel(), ix.ravel()], axis=1)
    centers = (cells[:, ::-1] + 0.5) * stride

    a = len(scales)
    return AnchorSet(
        np.tile(centers, (a, 1)),
        np.repeat(np.asarray(scales, dtype=np.float64), len(cells)),
        np.tile(cells, (a, 1)),
    )


def iou_matrix(
    centers_a: np.ndarray, d_a: np.ndarray, centers_b: np.ndarray, d_b: np.ndarray
) -> np.ndarray:
    """Pairwise cube IoU, shape (len(a), len(b))."""
    ca = np.asarray(centers_a, dtype=np.float64).reshape(-1, 1, 3)
    cb = np.asarray(centers_b, dtype=np.float64).reshape(1, -1, 3)
    ra = np.asarray(d_a, dtype=np.float64).reshape(-1, 1, 1) / 2.0
    rb = np.asarray(d_b, dtype=np.float64).reshape(1, -1, 1) / 2.0
    overlap = np.minimum(ca + ra, cb + rb) - np.maximum(ca - ra, cb - rb)
    inter = np.prod(np.clip(overlap, 0.0, None), axis=2)
    union = (2.0 * ra[..., 0]) ** 3 + (2.0 * rb[..., 0]) ** 3 - inter
    return inter / union


def iou(a: Box3, b: Box3) -> float:
    """Intersection volume over union volume of two cubes."""
    return float(iou_matrix(a.center, [a.d], b.center, [b.d])[0, 0])


def encode_box(gt: Box3, anchor: Union[Anchor, Box3]) -> np.ndarray:
    """Regression target ((x-xa)/da, (y-ya)/da, (z-za)/da, log(d/da))."""
    ref = anchor.box if isinstance(anchor, Anchor) else anchor
    if gt.d <= 0 or ref.d <= 0:
        raise DomainError("encode_box needs positive diameters")
    return np.concatenate([(gt.center - ref.center) / ref.d, [np.log(gt.d / ref.d)]])


def decode_box(t: Sequence[float], anchor: Union[Anchor, Box3]) -> Box3:
    """Inverse of ``encode_box``."""
    ref = anchor.box if isinstance(anchor, Anchor) else anchor
    t = np.asarray(t, dtype=np.float64)
    center = ref.center + t[:3] * ref.d
    return Box3(center[0], center[1], center[2], float(ref.d * np.exp(t[3])))


def encode_boxes(
    gt: np.ndarray, centers: np.ndarray, diameters: np.ndarray
) -> np.ndarray:
    """Vectorised ``encode_box`` for (M, 4) gt rows against M anchors."""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    da = diameters[:, None]
    return np.concatenate(
        [(gt[:, :3] - centers) / da, np.log(gt[:, 3:] / da)], axis=1
    )


def decode_deltas(
    deltas: np.ndarray, centers: np.ndarray, diameters: np.ndarray
) -> np.ndarray:
    """Vectorised ``decode_box``; returns (M, 4) rows of (x, y, z, d)."""
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    da = diameters[:, None]
    return np.concatenate(
        [centers + deltas[:, :3] * da, da * np.exp(deltas[:, 3:])], axis=1
    )


@dataclass(frozen=True)
class AnchorTarget:
    label: int  # 1 positive, 0 negative, -1 ignored
    delta: Optional[np.ndarray]


@dataclass
class TargetGrid:
    """Per-anchor labels and regression targets in anchor order."""

    labels: np.ndarray  # (M,) int8 of {1, 0, -1}
    deltas: np.ndarray  # (M, 4), zero where label != 1
    gt_index: np.ndarray  # (M,) matched gt for positives, -1 otherwise

    IGNORE = -1

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> AnchorTarget:
        label = int(self.labels[i])
        return AnchorTarget(label, self.deltas[i].copy() if label == 1 else None)

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))


def boxes_to_array(boxes: Sequence[Box3]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.stack([b.as_array() for b in boxes])


def assign_targets(
    anchors: AnchorSet,
    gt_boxes: Sequence[Box3],
    positive_iou: float = 0.5,
    negative_iou: float = 0.02,
) -> TargetGrid:
    """Label anchors by IoU against ground truth.

    Positive if the best IoU exceeds ``positive_iou``, negative if every IoU
    is below ``negative_iou``, ignored otherwise. Each gt, in order, is then
    forced positive on its best overlapping anchor that no earlier gt has
    claimed (lowest index on ties), so two gts never share a forced anchor.

    Args:
        anchors: Anchor set of one sample
        gt_boxes: Ground-truth boxes (may be empty)
        positive_iou: Positive threshold
        negative_iou: Negative threshold

    Returns:
        TargetGrid aligned with ``anchors``
    """
    m = len(anchors)
    labels = np.zeros(m, dtype=np.int8)
    deltas = np.zeros((m, 4))
    gt_index = np.full(m, -1, dtype=np.int64)
    if len(gt_boxes) == 0:
        return TargetGrid(labels, deltas, gt_index)

    gt = boxes_to_array(gt_boxes)
    overlaps = iou_matrix(anchors.centers, anchors.diameters, gt[:, :3], gt[:, 3])
    best_gt = np.argmax(overlaps, axis=1)
    best_iou = overlaps[np.arange(m), best_gt]

    labels[:] = TargetGrid.IGNORE
    labels[best_iou < negative_iou] = 0
    positive = best_iou > positive_iou
    labels[positive] = 1
    gt_index[positive] = best_gt[positive]

    claimed = np.zeros(m, dtype=bool)
    for j in range(len(gt)):
        ranked = np.argsort(-overlaps[:, j], kind="stable")
        free = ranked[~claimed[ranked] & (overlaps[ranked, j] > 0.0)]
        if len(free) == 0:
            continue
        k = int(free[0])
        claimed[k] = True
        labels[k] = 1
        gt_index[k] = j

    pos = np.flatnonzero(labels == 1)
    deltas[pos] = encode_boxes(
        gt[gt_index[pos]], anchors.centers[pos], anchors.diameters[pos]
    )
    return TargetGrid(labels, deltas, gt_index)
