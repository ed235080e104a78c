"""Binary checkpoint format for named tensors.

Layout (all integers little-endian uint32)::

    b"RCAT" | version | count
    repeated count times:
        name_len | name (utf-8) | rank | dims[rank] | float32 values (C order)
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"RCAT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(tensors))
    for name, value in tensors.items():
        arr = np.array(value, dtype="<f4", order="C")  # keeps 0-d shapes
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        buf += arr.tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(bytes(buf))
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    """Read a checkpoint; values come back as float64 arrays holding the stored float32 values."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an RCAT checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            out[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def to_float32_grid(arr: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 value, kept as float64."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)
