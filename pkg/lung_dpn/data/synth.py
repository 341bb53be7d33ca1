# -*- coding: utf-8 -*-
"""Synthetic planted-nodule volumes and classifier crops.

Every volume (or crop) draws from its own generator seeded with
(seed, index), so generating in parallel gives the same bytes as serially.
"""

import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage

from ..config.settings import DataConfig
from ..detection.boxes import Box3
from ..errors import SynthesisError
from .annotations import AnnotationRecord, write_manifest
from .volume import Volume, write_mhd

logger = logging.getLogger(__name__)

N_SPIKES = 8
MALIGNANT_SCORES = (4, 5)
BENIGN_SCORES = (1, 2)
N_RATERS = 4


@dataclass
class SynthVolume:
    series_id: str
    volume: Volume
    boxes: List[Box3]
    labels: List[int]  # 1 malignant, 0 benign
    scores: List[Tuple[int, ...]]

    def records(self) -> List[AnnotationRecord]:
        return [
            AnnotationRecord(self.series_id, (b.x, b.y, b.z), b.d, s)
            for b, s in zip(self.boxes, self.scores)
        ]


@dataclass
class SynthCrops:
    crops: np.ndarray  # (N, 32, 32, 32)
    pixels: np.ndarray  # (N, 16, 16, 16) central sub-crops
    labels: np.ndarray  # (N,)
    diameters: np.ndarray  # (N,)


def smooth_background(
    rng: np.random.Generator, shape: Tuple[int, int, int], high: float
) -> np.ndarray:
    """Gaussian-filtered noise rescaled to [0, high]."""
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=2.0)
    lo, hi = noise.min(), noise.max()
    return (noise - lo) / (hi - lo if hi > lo else 1.0) * high


def render_nodule(
    shape: Tuple[int, int, int],
    center_xyz: np.ndarray,
    diameter: float,
    malignant: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Intensity of one nodule over a (z, y, x) grid.

    Benign nodules are a smooth Gaussian blob; malignant ones add thin
    radial spikes reaching past the blob edge.
    """
    z, y, x = np.meshgrid(*(np.arange(e, dtype=np.float64) for e in shape), indexing="ij")
    offset = np.stack([x - center_xyz[0], y - center_xyz[1], z - center_xyz[2]], axis=-1)
    r = np.linalg.norm(offset, axis=-1)
    sigma = diameter / 4.0
    blob = 0.9 * np.exp(-(r**2) / (2.0 * sigma**2))
    if not malignant:
        return blob

    directions = rng.standard_normal((N_SPIKES, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    unit = offset / np.maximum(r, 1e-9)[..., None]
    cosines = unit @ directions.T  # (z, y, x, K)
    ridge = np.exp(-(1.0 - cosines.max(axis=-1)) / 0.02)
    reach = np.exp(-np.maximum(r - diameter / 2.0, 0.0) / (diameter / 2.0))
    spikes = 0.6 * ridge * reach * (r <= diameter * 1.2)
    return np.clip(blob + spikes, 0.0, 1.0)


def _place_nodules(
    rng: np.random.Generator, extent: int, diameters: List[float], max_retries: int
) -> List[np.ndarray]:
    centers: List[np.ndarray] = []
    for d in diameters:
        margin = d / 2.0 + 1.0
        for _ in range(max_retries):
            c = rng.uniform(margin, extent - 1 - margin, size=3)
            if all(
                np.linalg.norm(c - other) > (d + od) / 2.0 + 2.0
                for other, od in zip(centers, diameters)
            ):
                centers.append(c)
                break
        else:
            raise SynthesisError(
                f"could not place a {d:.1f}-voxel nodule after {max_retries} attempts"
            )
    return centers


def _scores(rng: np.random.Generator, malignant: bool) -> Tuple[int, ...]:
    pool = MALIGNANT_SCORES if malignant else BENIGN_SCORES
    return tuple(int(s) for s in rng.choice(pool, size=N_RATERS))


def _generate_one(index: int, extent: int, config: DataConfig, seed: int) -> SynthVolume:
    rng = np.random.default_rng([seed, index])
    shape = (extent,) * 3
    voxels = smooth_background(rng, shape, config.synth_background_max)

    lo, hi = config.synth_nodules_per_volume
    count = int(rng.integers(lo, hi + 1))
    malignant = [bool(rng.random() < config.synth_malignant_fraction) for _ in range(count)]
    diameters = [
        float(rng.uniform(*(config.synth_malignant_diameter if m else config.synth_benign_diameter)))
        for m in malignant
    ]
    centers = _place_nodules(rng, extent, diameters, config.synth_max_retries)

    boxes, scores = [], []
    for c, d, m in zip(centers, diameters, malignant):
        voxels = np.maximum(voxels, render_nodule(shape, c, d, m, rng))
        boxes.append(Box3(c[0], c[1], c[2], d))
        scores.append(_scores(rng, m))

    return SynthVolume(
        f"synth-{seed}-{index:03d}",
        Volume(np.clip(voxels, 0.0, 1.0)),
        boxes,
        [int(m) for m in malignant],
        scores,
    )


def synth_generate(
    n_volumes: int,
    extent: int = 48,
    config: Optional[DataConfig] = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> List[SynthVolume]:
    """Generate planted-nodule volumes already in the preprocessed [0, 1] domain.

    Args:
        n_volumes: Number of volumes (0 gives an empty list)
        extent: Cubic volume extent in voxels
        config: Generator settings (diameter ranges, background level)
        seed: Base seed
        n_jobs: joblib workers

    Returns:
        One SynthVolume per index

    Raises:
        SynthesisError: If the extent is too small or placement keeps colliding
    """
    config = config or DataConfig()
    largest = max(config.synth_benign_diameter[1], config.synth_malignant_diameter[1])
    if extent < 2 * largest:
        raise SynthesisError(f"extent {extent} is below twice the largest diameter {largest}")
    if n_volumes <= 0:
        return []
    volumes = Parallel(n_jobs=n_jobs)(
        delayed(_generate_one)(i, extent, config, seed) for i in range(n_volumes)
    )
    logger.info(
        f"✓ Generated {n_volumes} synthetic volumes with "
        f"{sum(len(v.boxes) for v in volumes)} nodules (seed {seed})"
    )
    return volumes


def write_synth_dataset(out_dir: str, volumes: List[SynthVolume]) -> str:
    """Write each volume as MHD/RAW plus ``manifest.csv``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for v in volumes:
        write_mhd(os.path.join(out_dir, f"{v.series_id}.mhd"), v.volume, "MET_FLOAT")
        records.extend(v.records())
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, records)
    return manifest


def _crop_one(index: int, extent: int, pixel_extent: int, config: DataConfig, seed: int):
    rng = np.random.default_rng([seed, index, 7])
    malignant = index % 2 == 1
    shape = (extent,) * 3
    d = float(rng.uniform(*(config.synth_malignant_diameter if malignant else config.synth_benign_diameter)))
    center = (extent - 1) / 2.0 + rng.uniform(-1.5, 1.5, size=3)
    crop = np.maximum(
        smooth_background(rng, shape, config.synth_background_max),
        render_nodule(shape, center, d, malignant, rng),
    )
    lo = (extent - pixel_extent) // 2
    return crop, crop[lo : lo + pixel_extent, lo : lo + pixel_extent, lo : lo + pixel_extent], int(malignant), d


def synth_crops(
    n: int,
    config: Optional[DataConfig] = None,
    seed: int = 0,
    extent: int = 32,
    pixel_extent: int = 16,
    n_jobs: int = 1,
) -> SynthCrops:
    """Balanced classifier crops: odd indices malignant (spiky), even benign."""
    config = config or DataConfig()
    if n <= 0:
        empty = np.zeros((0,) + (extent,) * 3)
        return SynthCrops(empty, np.zeros((0,) + (pixel_extent,) * 3), np.zeros(0), np.zeros(0))
    results = Parallel(n_jobs=n_jobs)(
        delayed(_crop_one)(i, extent, pixel_extent, config, seed) for i in range(n)
    )
    crops, pixels, labels, diameters = zip(*results)
    return SynthCrops(
        np.stack(crops), np.stack(pixels), np.asarray(labels, dtype=np.float64), np.asarray(diameters)
    )
