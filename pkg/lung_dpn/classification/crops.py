# -*- coding: utf-8 -*-
"""Fixed-size nodule crops around detected or annotated centres."""

from dataclasses import dataclass

import numpy as np

from ..data.volume import Volume
from ..detection.boxes import Box3
from ..errors import DomainError


@dataclass
class NoduleCrop:
    voxels: np.ndarray  # (1, 1, E, E, E)
    center: Box3
    diameter: float

    @property
    def extent(self) -> int:
        return self.voxels.shape[-1]

    @property
    def cube(self) -> np.ndarray:
        """The crop as a plain (E, E, E) array."""
        return self.voxels[0, 0]


def crop_patch(
    volume, center: Box3, extent: int = 32, fill_value: float = 0.0
) -> NoduleCrop:
    """Cut an extent³ cube around the voxel nearest to ``center``.

    The cube spans [c - extent//2, c - extent//2 + extent) per axis;
    voxels outside the volume take ``fill_value``.

    Args:
        volume: Volume or (z, y, x) array
        center: Box whose centre is the crop centre; d is kept as the size
        extent: Cube edge (32 for the classifier, 16 for pixel features)
        fill_value: Out-of-bounds value

    Returns:
        NoduleCrop of shape (1, 1, extent, extent, extent)

    Raises:
        DomainError: If the centre lies outside the volume
    """
    voxels = volume.voxels if isinstance(volume, Volume) else np.asarray(volume)
    shape_xyz = voxels.shape[::-1]
    c = np.floor(center.center + 0.5).astype(np.int64)
    if np.any(c < 0) or np.any(c >= np.asarray(shape_xyz)):
        raise DomainError(f"crop centre {tuple(center.center)} lies outside volume {shape_xyz}")

    out = np.full((extent,) * 3, fill_value, dtype=np.float64)
    lo = c - extent // 2
    src_lo = np.maximum(lo, 0)
    src_hi = np.minimum(lo + extent, shape_xyz)
    dst_lo = src_lo - lo
    dst_hi = dst_lo + (src_hi - src_lo)
    out[dst_lo[2] : dst_hi[2], dst_lo[1] : dst_hi[1], dst_lo[0] : dst_hi[0]] = voxels[
        src_lo[2] : src_hi[2], src_lo[1] : src_hi[1], src_lo[0] : src_hi[0]
    ]
    return NoduleCrop(out[None, None], center, float(center.d))
