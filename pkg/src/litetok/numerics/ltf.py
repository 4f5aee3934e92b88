"""LTF1 binary tensor files.

Layout: ``b"LTF1"``, little-endian u32 rank, u64 extents, then row-major
little-endian float32 payload. No padding, no compression.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from litetok.errors import DimensionError

MAGIC = b"LTF1"


def encode(array) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise DimensionError("not an LTF1 file (bad magic)")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 8 * ndim
    if len(buf) < off:
        raise DimensionError("truncated LTF1 header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 8)
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) != off + 4 * count:
        raise DimensionError(f"LTF1 payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)


def save(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
