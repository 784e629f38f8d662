"""Writer/reader for the evaluation toolkit's tensor file format.

This is an independent implementation of the published contract (magic
"SUQT", version 0x01, element-kind byte, ndim byte, u32 little-endian
extents, row-major little-endian payload); the file format, not shared code,
is the interface to the evaluation side.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SUQT"
VERSION = 1
KIND_FLOAT32 = 0x01
KIND_UINT8 = 0x02

_KIND_TO_DTYPE = {KIND_FLOAT32: np.dtype("<f4"), KIND_UINT8: np.dtype("u1")}


class ExportError(Exception):
    """An export step produced or met out-of-contract data."""


def write_tensor(array: np.ndarray, path) -> None:
    arr = np.asarray(array)
    if arr.dtype in (np.float64, np.float16):
        arr = arr.astype(np.float32)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype == np.float32:
        kind = KIND_FLOAT32
        if not np.isfinite(arr).all():
            raise ExportError(f"{path}: refusing to write non-finite float values")
    elif arr.dtype == np.uint8:
        kind = KIND_UINT8
        if arr.size and arr.max() > 1:
            raise ExportError(f"{path}: label tensors must be binary")
    else:
        raise ExportError(f"{path}: unsupported dtype {arr.dtype}")
    if arr.ndim == 0 or arr.size == 0 or arr.ndim > 8:
        raise ExportError(f"{path}: bad tensor shape {arr.shape}")
    header = MAGIC + struct.pack("<BBB", VERSION, kind, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out = np.ascontiguousarray(arr, dtype=_KIND_TO_DTYPE[kind])
    with open(Path(path), "wb") as f:
        f.write(header)
        out.tofile(f)


def read_tensor(path) -> np.ndarray:
    """Read back an exported tensor (pre-validation and tests)."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(7)
        if len(head) < 7 or head[:4] != MAGIC:
            raise ExportError(f"{path}: not a SUQT tensor")
        version, kind, ndim = struct.unpack("<BBB", head[4:7])
        if version != VERSION or kind not in _KIND_TO_DTYPE or not 1 <= ndim <= 8:
            raise ExportError(f"{path}: unsupported header")
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        dtype = _KIND_TO_DTYPE[kind]
        n = int(np.prod(dims))
        data = np.fromfile(f, dtype=dtype, count=n)
        if data.size != n or f.read(1):
            raise ExportError(f"{path}: payload size mismatch")
    return data.reshape(dims)
