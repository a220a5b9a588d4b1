"""BTSR: the binary tensor file format used for process exchange.

Layout (all little-endian):
    bytes 0..3   magic "BTSR"
    byte  4      format version (1)
    byte  5      dtype code (0 = float32)
    byte  6      ndim
    next 4*ndim  uint32 dims
    rest         payload, C-order float32

The format is bit-exact: writing the same array twice produces identical
bytes.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from bloomseg.errors import DataError

MAGIC = b"BTSR"
VERSION = 1
DTYPE_F32 = 0


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype="<f4")
    if a.ndim < 1 or a.ndim > 255:
        raise DataError(f"tensor rank {a.ndim} not representable", "backend")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(a.tobytes())
    os.replace(tmp, path)


def read_tensor(path: str | Path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError:
        raise DataError(f"tensor file {path} does not exist", "backend")
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a BTSR tensor (bad magic)", "backend")
    version, dtype_code, ndim = struct.unpack("<BBB", blob[4:7])
    if version != VERSION:
        raise DataError(f"{path}: unsupported BTSR version {version}", "backend")
    if dtype_code != DTYPE_F32:
        raise DataError(f"{path}: unsupported dtype code {dtype_code}", "backend")
    dim_end = 7 + 4 * ndim
    if len(blob) < dim_end:
        raise DataError(f"{path}: truncated BTSR header", "backend")
    dims = struct.unpack(f"<{ndim}I", blob[7:dim_end])
    expected = int(np.prod(dims, dtype=np.int64)) * 4
    payload = blob[dim_end:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: dimension mismatch, dims {dims} need {expected} payload "
            f"bytes but file has {len(payload)}",
            "backend",
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
