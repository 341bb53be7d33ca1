# -*- coding: utf-8 -*-
"""Training-time augmentation for detector volumes and classifier crops.

Random choices are drawn into explicit ``*Draw`` records first and applied
second, so a draw can be replayed on boxes, targets or masks.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..config.settings import ClassifierConfig, DetectorConfig
from ..detection.boxes import Box3
from ..errors import DimensionError

Flips = Tuple[bool, bool, bool]  # x, y, z


@dataclass(frozen=True)
class DetectionDraw:
    flips: Flips = (False, False, False)
    scale: float = 1.0


@dataclass(frozen=True)
class ClassificationDraw:
    offset: Tuple[int, int, int] = (2, 2, 2)  # (z, y, x) corner inside the padded crop
    flips: Flips = (False, False, False)
    zero_corner: Optional[Tuple[int, int, int]] = None  # (z, y, x), None = no patch


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def flip_voxels(voxels: np.ndarray, flips: Flips) -> np.ndarray:
    """Reverse array axes for the (x, y, z) flags of a (z, y, x) array."""
    for axis, flag in zip((2, 1, 0), flips):
        if flag:
            voxels = np.flip(voxels, axis=axis)
    return np.ascontiguousarray(voxels)


def flip_boxes(boxes: Sequence[Box3], flips: Flips, extent_xyz: Sequence[int]) -> List[Box3]:
    """Mirror centres with c → extent - 1 - c on each flipped axis."""
    out = []
    for b in boxes:
        c = [
            e - 1 - v if flag else v
            for v, flag, e in zip((b.x, b.y, b.z), flips, extent_xyz)
        ]
        out.append(Box3(c[0], c[1], c[2], b.d))
    return out


def scale_voxels(voxels: np.ndarray, scale: float, order: int = 1) -> np.ndarray:
    """Zoom about the volume centre, keeping the array shape.

    Output voxel o samples input position c + (o - c)/scale with
    c = (extent - 1)/2; regions pulled in from outside are filled with 0.
    """
    if scale == 1.0:
        return voxels.copy()
    center = (np.asarray(voxels.shape, dtype=np.float64) - 1.0) / 2.0
    return ndimage.affine_transform(
        voxels,
        np.full(3, 1.0 / scale),
        offset=center - center / scale,
        order=order,
        mode="constant",
        cval=0.0,
    )


def scale_boxes(boxes: Sequence[Box3], scale: float, extent_xyz: Sequence[int]) -> List[Box3]:
    """Apply the ``scale_voxels`` map to box centres and diameters."""
    center = (np.asarray(extent_xyz, dtype=np.float64) - 1.0) / 2.0
    out = []
    for b in boxes:
        c = center + (b.center - center) * scale
        out.append(Box3(c[0], c[1], c[2], b.d * scale))
    return out


def draw_detection(rng, config: Optional[DetectorConfig] = None) -> DetectionDraw:
    config = config or DetectorConfig()
    rng = _as_rng(rng)
    flips = tuple(bool(f) for f in rng.random(3) < 0.5) if config.flip_augment else (False,) * 3
    scale = float(rng.uniform(*config.scale_range)) if config.scale_augment else 1.0
    return DetectionDraw(flips, scale)


def apply_detection_draw(
    voxels: np.ndarray,
    boxes: Sequence[Box3],
    draw: DetectionDraw,
    mask: bool = False,
) -> Tuple[np.ndarray, List[Box3]]:
    """Flip then scale a (z, y, x) volume and its boxes jointly.

    Boxes whose centre leaves the volume after scaling are dropped.

    Args:
        voxels: Volume array
        boxes: Boxes in voxel coordinates of ``voxels``
        draw: Transform to apply
        mask: Use nearest-neighbour interpolation (label volumes)

    Returns:
        Transformed voxels and boxes
    """
    extent = voxels.shape[::-1]
    out = scale_voxels(flip_voxels(voxels, draw.flips), draw.scale, order=0 if mask else 1)
    moved = scale_boxes(flip_boxes(boxes, draw.flips, extent), draw.scale, extent)
    inside = [
        b for b in moved if all(0 <= v <= e - 1 for v, e in zip((b.x, b.y, b.z), extent))
    ]
    return out, inside


def augment_detection(
    voxels: np.ndarray,
    boxes: Sequence[Box3],
    rng,
    config: Optional[DetectorConfig] = None,
) -> Tuple[np.ndarray, List[Box3]]:
    """Random flips and scale jitter applied to a volume and its boxes."""
    return apply_detection_draw(voxels, boxes, draw_detection(rng, config))


def draw_classification(rng, config: Optional[ClassifierConfig] = None) -> ClassificationDraw:
    config = config or ClassifierConfig()
    rng = _as_rng(rng)
    slack = config.pad_extent - config.crop_extent
    offset = tuple(int(v) for v in rng.integers(0, slack + 1, size=3))
    flips = tuple(bool(f) for f in rng.random(3) < 0.5) if config.flip_augment else (False,) * 3
    zero_corner = None
    if rng.random() < config.zero_patch_probability:
        zero_corner = tuple(
            int(v) for v in rng.integers(0, config.crop_extent - config.zero_patch_extent + 1, size=3)
        )
    return ClassificationDraw(offset, flips, zero_corner)


def apply_classification_draw(
    crop: np.ndarray,
    draw: ClassificationDraw,
    mean: float = 0.0,
    std: float = 1.0,
    config: Optional[ClassifierConfig] = None,
) -> np.ndarray:
    """Pad, re-crop, flip, z-score and optionally zero one cube of a crop.

    Args:
        crop: (E, E, E) crop with E = ``config.crop_extent``
        draw: Transform to apply
        mean: Training-set voxel mean
        std: Training-set voxel standard deviation
        config: Crop and patch sizes

    Returns:
        Normalized (E, E, E) crop
    """
    config = config or ClassifierConfig()
    e = config.crop_extent
    if crop.shape != (e, e, e):
        raise DimensionError(f"expected a {e}³ crop, got {crop.shape}")
    lead = (config.pad_extent - e) // 2
    trail = config.pad_extent - e - lead
    padded = np.pad(crop, [(lead, trail)] * 3, mode="constant", constant_values=0.0)
    oz, oy, ox = draw.offset
    out = flip_voxels(padded[oz : oz + e, oy : oy + e, ox : ox + e], draw.flips)
    out = (out - mean) / (std if std > 0 else 1.0)
    if draw.zero_corner is not None:
        z, y, x = draw.zero_corner
        k = config.zero_patch_extent
        out[z : z + k, y : y + k, x : x + k] = 0.0
    return out


def augment_classification(
    crop: np.ndarray,
    rng,
    mean: float = 0.0,
    std: float = 1.0,
    config: Optional[ClassifierConfig] = None,
) -> np.ndarray:
    return apply_classification_draw(crop, draw_classification(rng, config), mean, std, config)
