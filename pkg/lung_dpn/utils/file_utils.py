# -*- coding: utf-8 -*-
"""File utility functions."""

import hashlib
import os
from typing import List, Optional, Sequence

import pandas as pd

from ..errors import DataError

# enough digits to round-trip a float64 through text
FLOAT_FORMAT = "%.17g"


def get_file_hash(file_path: str) -> Optional[str]:
    """Calculate SHA256 hash of a file.

    Args:
        file_path: Path to the file to hash

    Returns:
        SHA256 hash string or None if the file cannot be read
    """
    hash_sha256 = hashlib.sha256()
    try:
        with open(file_path, "rb") as f:
            for chunk in iter(lambda: f.read(65536), b""):
                hash_sha256.update(chunk)
        return hash_sha256.hexdigest()
    except OSError:
        return None


def find_mhd_files(base_path: str) -> List[str]:
    """Find all ``.mhd`` headers recursively, sorted for reproducible order.

    Args:
        base_path: Base directory to search

    Returns:
        List of header paths (empty if the directory does not exist)
    """
    mhd_files = []
    if not os.path.exists(base_path):
        return mhd_files

    for root, _dirs, files in os.walk(base_path):
        for file in files:
            if file.endswith(".mhd"):
                mhd_files.append(os.path.join(root, file))

    return sorted(mhd_files)


def series_id_of(path: str) -> str:
    """Series identifier of a volume file (its name without extension)."""
    return os.path.splitext(os.path.basename(path))[0]


def ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_csv(path: str, frame: pd.DataFrame):
    """Write a frame without index using the shared float format."""
    ensure_parent(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_csv(path: str, required: Sequence[str]) -> pd.DataFrame:
    """Read a CSV and check that the named columns are present.

    Raises:
        DataError: If the file is missing, malformed or lacks a required column
    """
    if not os.path.exists(path):
        raise DataError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={"series_id": str, "seriesuid": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot parse {path}: {e}") from e
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns: {', '.join(missing)}")
    return frame
