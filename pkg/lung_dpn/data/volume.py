# -*- coding: utf-8 -*-
"""CT volumes: MetaImage (MHD/RAW) I/O, HU preprocessing, coordinate transforms."""

import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import DimensionError, MhdParseError

logger = logging.getLogger(__name__)

ELEMENT_TYPES: Dict[str, str] = {
    "MET_SHORT": "<i2",
    "MET_FLOAT": "<f4",
    "MET_UCHAR": "u1",
    "MET_DOUBLE": "<f8",
}
REQUIRED_KEYS = ("NDims", "DimSize", "ElementSpacing", "Offset", "ElementType", "ElementDataFile")
# scanners write the origin under any of these names
OFFSET_ALIASES = ("Offset", "Origin", "Position")


@dataclass
class Volume:
    """3D scalar grid stored (z, y, x); spacing and origin are (x, y, z) in mm."""

    voxels: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.voxels.ndim != 3:
            raise DimensionError(f"volume must be 3-D, got shape {self.voxels.shape}")
        if self.mask is not None and self.mask.shape != self.voxels.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} does not match voxels {self.voxels.shape}"
            )
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.voxels.shape

    @property
    def extent_xyz(self) -> Tuple[int, int, int]:
        z, y, x = self.voxels.shape
        return (x, y, z)


def _parse_header(text: str) -> Dict[str, str]:
    header = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    for alias in OFFSET_ALIASES[1:]:
        if "Offset" not in header and alias in header:
            header["Offset"] = header[alias]
    return header


def _floats(header: Dict[str, str], key: str, count: int) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in header[key].split())
    except ValueError as e:
        raise MhdParseError(f"{key} is not numeric: {header[key]!r}", key=key) from e
    if len(values) != count:
        raise MhdParseError(f"{key} needs {count} values, got {len(values)}", key=key)
    return values


def parse_mhd(header_text: str, raw: bytes, mask: Optional[np.ndarray] = None) -> Volume:
    """Decode a MetaImage header and its raw little-endian payload.

    Args:
        header_text: Contents of the ``.mhd`` file
        raw: Contents of the data file
        mask: Optional foreground mask with the same extents

    Returns:
        Volume with voxels reshaped to (z, y, x)

    Raises:
        MhdParseError: Missing or malformed key, unsupported type, or a
            byte count that does not match DimSize
    """
    header = _parse_header(header_text)
    for key in REQUIRED_KEYS:
        if key not in header:
            raise MhdParseError(f"MHD header is missing {key}", key=key)
    if header["NDims"].strip() != "3":
        raise MhdParseError(f"only 3-D volumes are supported, NDims={header['NDims']}", key="NDims")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise MhdParseError("big-endian data is not supported", key="BinaryDataByteOrderMSB")
    element_type = header["ElementType"]
    if element_type not in ELEMENT_TYPES:
        raise MhdParseError(f"unsupported ElementType {element_type}", key="ElementType")

    dims = tuple(int(v) for v in _floats(header, "DimSize", 3))
    spacing = _floats(header, "ElementSpacing", 3)
    origin = _floats(header, "Offset", 3)
    if min(dims) < 1:
        raise MhdParseError(f"DimSize must be positive, got {dims}", key="DimSize")

    dtype = np.dtype(ELEMENT_TYPES[element_type])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise MhdParseError(
            f"raw data holds {len(raw)} bytes, DimSize {dims} of {element_type} "
            f"needs {expected}",
            key="DimSize",
        )
    voxels = np.frombuffer(raw, dtype=dtype).reshape(dims[::-1]).astype(np.float64)
    return Volume(voxels, spacing, origin, mask)


def read_mhd(path: str, mask_path: Optional[str] = None) -> Volume:
    """Read a ``.mhd`` file and the data file it names (LOCAL data supported)."""
    if not os.path.exists(path):
        raise MhdParseError(f"header file {path} not found")
    with open(path, "rb") as f:
        blob = f.read()
    marker = blob.find(b"ElementDataFile")
    if marker < 0:
        raise MhdParseError(f"{path} has no ElementDataFile entry", key="ElementDataFile")
    line_end = blob.find(b"\n", marker)
    line_end = len(blob) if line_end < 0 else line_end + 1
    header_text = blob[:line_end].decode("utf-8", errors="replace")
    data_file = _parse_header(header_text).get("ElementDataFile", "")

    if data_file == "LOCAL":
        raw = blob[line_end:]
    else:
        raw_path = os.path.join(os.path.dirname(path), data_file)
        if not os.path.exists(raw_path):
            raise MhdParseError(f"data file {raw_path} not found", key="ElementDataFile")
        with open(raw_path, "rb") as f:
            raw = f.read()

    mask = read_mhd(mask_path).voxels > 0 if mask_path else None
    return parse_mhd(header_text, raw, mask)


def write_mhd(path: str, volume: Volume, element_type: str = "MET_FLOAT") -> str:
    """Write ``path`` (.mhd) and a sibling ``.raw`` file.

    Returns:
        Path of the written raw file
    """
    if element_type not in ELEMENT_TYPES:
        raise MhdParseError(f"unsupported ElementType {element_type}", key="ElementType")
    raw_path = os.path.splitext(path)[0] + ".raw"
    x, y, z = volume.extent_xyz
    header = "\n".join(
        [
            "ObjectType = Image",
            "NDims = 3",
            "BinaryData = True",
            "BinaryDataByteOrderMSB = False",
            f"Offset = {' '.join(repr(v) for v in volume.origin)}",
            f"ElementSpacing = {' '.join(repr(v) for v in volume.spacing)}",
            f"DimSize = {x} {y} {z}",
            f"ElementType = {element_type}",
            f"ElementDataFile = {os.path.basename(raw_path)}",
            "",
        ]
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write(header)
    with open(raw_path, "wb") as f:
        f.write(volume.voxels.astype(ELEMENT_TYPES[element_type]).tobytes())
    return raw_path


def preprocess(volume: Volume, hu_min: float = -1200.0, hu_max: float = 600.0) -> Volume:
    """Clip HU to [hu_min, hu_max], map linearly to [0, 1], zero masked-out voxels."""
    voxels = (np.clip(volume.voxels, hu_min, hu_max) - hu_min) / (hu_max - hu_min)
    if volume.mask is not None:
        voxels = np.where(volume.mask, voxels, 0.0)
    return replace(volume, voxels=voxels)


def world_to_voxel(world: Sequence[float], volume: Volume) -> np.ndarray:
    """(world - origin) / spacing, per (x, y, z) axis; accepts (3,) or (N, 3)."""
    return (np.asarray(world, dtype=np.float64) - np.asarray(volume.origin)) / np.asarray(
        volume.spacing
    )


def voxel_to_world(voxel: Sequence[float], volume: Volume) -> np.ndarray:
    return np.asarray(voxel, dtype=np.float64) * np.asarray(volume.spacing) + np.asarray(
        volume.origin
    )


def resample_isotropic(volume: Volume, spacing: float = 1.0) -> Volume:
    """Trilinear resampling to cubic voxels of ``spacing`` mm (nearest for masks)."""
    factors = np.asarray(volume.spacing[::-1]) / spacing
    voxels = ndimage.zoom(volume.voxels, factors, order=1, mode="nearest")
    mask = None
    if volume.mask is not None:
        mask = ndimage.zoom(volume.mask.astype(np.uint8), factors, order=0) > 0
        mask = mask[: voxels.shape[0], : voxels.shape[1], : voxels.shape[2]]
    logger.debug(f"Resampled {volume.shape} → {voxels.shape} at {spacing} mm")
    return Volume(voxels, (spacing,) * 3, volume.origin, mask)
