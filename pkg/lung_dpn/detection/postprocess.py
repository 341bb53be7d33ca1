# -*- coding: utf-8 -*-
"""Whole-volume inference: tiling, decoding, thresholding and NMS."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit, logit

from ..config.settings import PipelineConfig
from ..core.tensor import Tensor, no_grad
from ..data.volume import Volume
from ..errors import DomainError
from ..network.detector import Detector, DetectorOutput
from ..utils.file_utils import read_csv, write_csv
from .boxes import AnchorSet, Box3, decode_deltas, generate_anchors, iou_matrix

logger = logging.getLogger(__name__)

DETECTION_COLUMNS = ["series_id", "x", "y", "z", "d", "probability"]

PredictFn = Callable[[np.ndarray], DetectorOutput]


@dataclass(frozen=True)
class Detection:
    box: Box3
    probability: float
    logit: float

    @classmethod
    def from_logit(cls, box: Box3, score: float) -> "Detection":
        return cls(box, float(expit(score)), float(score))

    def sort_key(self):
        return (-self.probability,) + self.box.sort_key()


@dataclass
class Patch:
    """One detector input tile; offset and interior bounds are (x, y, z)."""

    voxels: np.ndarray  # (P, P, P) stored (z, y, x)
    offset: Tuple[int, int, int]
    interior_lo: Tuple[float, float, float]
    interior_hi: Tuple[float, float, float]

    def owns(self, centers: np.ndarray) -> np.ndarray:
        """Mask of (N, 3) volume-frame centres inside this patch's interior."""
        centers = np.asarray(centers).reshape(-1, 3)
        lo, hi = np.asarray(self.interior_lo), np.asarray(self.interior_hi)
        return np.all((centers >= lo) & (centers < hi), axis=1)


def patch_starts(extent: int, patch_extent: int, overlap: int) -> List[int]:
    """Tile starts along one axis; the last tile may run past the volume."""
    if overlap >= patch_extent or overlap < 0:
        raise DomainError(f"overlap {overlap} must lie in [0, {patch_extent})")
    starts = [0]
    while starts[-1] + patch_extent < extent:
        starts.append(starts[-1] + patch_extent - overlap)
    return starts


def _interiors(starts: List[int], overlap: int, extent: int) -> List[Tuple[float, float]]:
    # the last interior ends at the far voxel edge
    lo = [0.0] + [s + overlap / 2.0 for s in starts[1:]]
    hi = lo[1:] + [extent - 0.5]
    return list(zip(lo, hi))


def split_volume(
    volume, patch_extent: int = 96, overlap: int = 32, fill_value: float = 0.0
) -> List[Patch]:
    """Cover the volume with overlapping cubic patches.

    Boundary patches are padded with ``fill_value``. Each patch owns the
    half-open interior from its start plus half the overlap (0 for the
    first) to the next patch's interior start, so interiors partition the
    volume.

    Args:
        volume: Volume or (z, y, x) array
        patch_extent: Patch edge length in voxels
        overlap: Overlap between neighbouring patches
        fill_value: Padding value

    Returns:
        Patches in (z, y, x) raster order
    """
    voxels = volume.voxels if isinstance(volume, Volume) else np.asarray(volume)
    ez, ey, ex = voxels.shape
    starts = [patch_starts(e, patch_extent, overlap) for e in (ex, ey, ez)]
    interiors = [_interiors(s, overlap, e) for s, e in zip(starts, (ex, ey, ez))]

    need = [s[-1] + patch_extent for s in starts]  # x, y, z
    padded = np.full((need[2], need[1], need[0]), fill_value, dtype=np.float64)
    padded[:ez, :ey, :ex] = voxels

    patches = []
    for kz, oz in enumerate(starts[2]):
        for ky, oy in enumerate(starts[1]):
            for kx, ox in enumerate(starts[0]):
                patches.append(
                    Patch(
                        padded[oz : oz + patch_extent, oy : oy + patch_extent, ox : ox + patch_extent].copy(),
                        (ox, oy, oz),
                        (interiors[0][kx][0], interiors[1][ky][0], interiors[2][kz][0]),
                        (interiors[0][kx][1], interiors[1][ky][1], interiors[2][kz][1]),
                    )
                )
    return patches


def stitch_patches(patches: Sequence[Patch], shape: Tuple[int, int, int]) -> np.ndarray:
    """Reassemble a (z, y, x) array from patch interiors."""
    out = np.zeros(shape)
    ez, ey, ex = shape
    for p in patches:
        ox, oy, oz = p.offset
        lo = [int(v) for v in p.interior_lo]
        hi = [int(np.ceil(min(v, e))) for v, e in zip(p.interior_hi, (ex, ey, ez))]
        out[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]] = p.voxels[
            lo[2] - oz : hi[2] - oz, lo[1] - oy : hi[1] - oy, lo[0] - ox : hi[0] - ox
        ]
    return out


def decode_patch_arrays(
    output: DetectorOutput,
    anchors: AnchorSet,
    offset: Sequence[float] = (0, 0, 0),
    sample: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Decoded (M, 4) boxes in volume coordinates and their (M,) logits."""
    logits = output.anchor_logits(sample).data
    deltas = output.anchor_deltas(sample).data
    boxes = decode_deltas(deltas, anchors.centers, anchors.diameters)
    boxes[:, :3] += np.asarray(offset, dtype=np.float64)
    return boxes, logits


def _to_detections(boxes: np.ndarray, logits: np.ndarray) -> List[Detection]:
    return [
        Detection.from_logit(Box3(*row), score)
        for row, score in zip(boxes.tolist(), logits.tolist())
    ]


def decode_patch(
    output: DetectorOutput,
    anchors: AnchorSet,
    offset: Sequence[float] = (0, 0, 0),
    sample: int = 0,
) -> List[Detection]:
    """Decode every anchor of one patch and shift boxes by the patch offset."""
    return _to_detections(*decode_patch_arrays(output, anchors, offset, sample))


def filter_by_probability(
    detections: Sequence[Detection], logit_threshold: float = -2.0
) -> List[Detection]:
    """Keep detections with logit strictly above the threshold, in order."""
    return [d for d in detections if d.logit > logit_threshold]


def nms(detections: Sequence[Detection], iou_threshold: float = 0.1) -> List[Detection]:
    """Greedy non-maximum suppression.

    Candidates are visited by descending probability (ties by lower
    (x, y, z, d)); a candidate is dropped if its IoU with any kept box
    exceeds ``iou_threshold``.
    """
    ordered = sorted(detections, key=Detection.sort_key)
    if not ordered:
        return []
    boxes = np.array([d.box.as_array() for d in ordered])
    overlaps = iou_matrix(boxes[:, :3], boxes[:, 3], boxes[:, :3], boxes[:, 3])
    kept: List[int] = []
    for i in range(len(ordered)):
        if not kept or np.all(overlaps[i, kept] <= iou_threshold):
            kept.append(i)
    return [ordered[i] for i in kept]


def detector_predict_fn(net: Detector) -> PredictFn:
    """Wrap a detector as a patch predictor (eval mode, no graph recorded)."""
    net.eval()

    def predict(patch: np.ndarray) -> DetectorOutput:
        with no_grad():
            return net(Tensor(patch[None, None]))

    return predict


def detect_volume(
    volume,
    predict_fn: PredictFn,
    config: Optional[PipelineConfig] = None,
) -> List[Detection]:
    """Tile, predict, decode, keep interior centres, threshold, then NMS.

    Args:
        volume: Preprocessed Volume or (z, y, x) array
        predict_fn: Maps a (P, P, P) patch to a DetectorOutput of batch 1
        config: Pipeline configuration

    Returns:
        Surviving detections sorted by descending probability
    """
    config = config or PipelineConfig.default()
    post, det = config.postprocess, config.detector
    patches = split_volume(volume, post.patch_extent, post.overlap, post.fill_value)
    grid = post.patch_extent // det.output_stride
    anchors = generate_anchors(grid, det.output_stride, det.anchor_scales)

    def run(patch: Patch) -> Tuple[np.ndarray, np.ndarray]:
        boxes, logits = decode_patch_arrays(predict_fn(patch.voxels), anchors, patch.offset)
        keep = patch.owns(boxes[:, :3]) & (logits > post.logit_threshold)
        return boxes[keep], logits[keep]

    results = Parallel(n_jobs=post.n_jobs, prefer="threads")(
        delayed(run)(p) for p in patches
    )
    candidates = []
    for boxes, logits in results:
        candidates.extend(_to_detections(boxes, logits))
    kept = nms(candidates, post.nms_iou)
    logger.debug(
        f"{len(patches)} patches → {len(candidates)} candidates → {len(kept)} after NMS"
    )
    return kept


def write_detections(path: str, detections: Dict[str, Sequence[Detection]]):
    """Detection CSV: one row per detection, series in insertion order."""
    rows = [
        (series_id, d.box.x, d.box.y, d.box.z, d.box.d, d.probability)
        for series_id, dets in detections.items()
        for d in dets
    ]
    write_csv(path, pd.DataFrame(rows, columns=DETECTION_COLUMNS))


def read_detections(path: str) -> Dict[str, List[Detection]]:
    frame = read_csv(path, DETECTION_COLUMNS)
    out: Dict[str, List[Detection]] = {}
    for row in frame.itertuples(index=False):
        p = float(np.clip(row.probability, 1e-15, 1 - 1e-15))
        out.setdefault(str(row.series_id), []).append(
            Detection(Box3(row.x, row.y, row.z, row.d), float(row.probability), float(logit(p)))
        )
    return out
