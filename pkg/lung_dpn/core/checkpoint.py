# -*- coding: utf-8 -*-
"""DLT1 binary checkpoints: named float64 tensors in little-endian records."""

import struct
from collections import OrderedDict
from typing import Dict

import numpy as np

from ..errors import CheckpointError

MAGIC = b"DLT1"


def save_tensors(path: str, tensors: Dict[str, np.ndarray]):
    """Write tensors as ``name_len | name | rank | extents | data`` records.

    Args:
        path: Destination file
        tensors: Mapping of name to array (converted to float64)
    """
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, value in tensors.items():
            array = np.ascontiguousarray(value, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<Q", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<Q", array.ndim))
            f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            f.write(array.tobytes())


def load_tensors(path: str) -> "OrderedDict[str, np.ndarray]":
    """Read every record of a DLT1 file in order.

    Raises:
        CheckpointError: On an unreadable file, a bad magic or a truncated record
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e.strerror or e}") from e
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a DLT1 checkpoint")

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = 4
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(blob):
                raise CheckpointError(
                    f"Tensor {name} truncated: expected {nbytes} bytes, "
                    f"found {len(blob) - pos}"
                )
            tensors[name] = (
                np.frombuffer(blob, dtype="<f8", count=count, offset=pos)
                .reshape(shape)
                .astype(np.float64)
            )
            pos += nbytes
    except struct.error as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e
    return tensors


def save_module(path: str, module, extra: Dict[str, np.ndarray] = None):
    """Checkpoint a module's parameters and buffers plus any extra arrays."""
    state = module.state_dict()
    for name, value in (extra or {}).items():
        state[name] = np.asarray(value, dtype=np.float64)
    save_tensors(path, state)


def load_module(path: str, module) -> "OrderedDict[str, np.ndarray]":
    """Restore a module in place; returns the full record set (extras included)."""
    tensors = load_tensors(path)
    module.load_state_dict(tensors)
    return tensors
