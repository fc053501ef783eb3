"""``.rfr`` raster blobs: a fixed 32-byte header followed by raw little-endian planes.

Header layout (little-endian)::

    offset  size  field
    0       4     magic  b"RFR1"
    4       2     format version (uint16, currently 1)
    6       2     dtype code (uint16; 1 = float32)
    8       4     B  (uint32, number of planes)
    12      4     H  (uint32)
    16      4     W  (uint32)
    20      12    reserved, zero

The payload is ``B*H*W`` values in C order (band, row, column).
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFR1"
VERSION = 1
HEADER = struct.Struct("<4sHHIII12x")
DTYPES = {1: np.dtype("<f4")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}

assert HEADER.size == 32


class BlobError(ValueError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim != 3:
        raise ValueError(f"expected a (B, H, W) array, got shape {array.shape}")
    data = np.ascontiguousarray(array, dtype="<f4")
    b, h, w = data.shape
    return HEADER.pack(MAGIC, VERSION, DTYPE_CODES[data.dtype], b, h, w) + data.tobytes()


def decode(buf: bytes, path="<bytes>") -> np.ndarray:
    if len(buf) < HEADER.size:
        raise BlobError(path, "truncated header")
    magic, version, code, b, h, w = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BlobError(path, f"bad magic {magic!r}")
    if version != VERSION:
        raise BlobError(path, f"unsupported version {version}")
    if code not in DTYPES:
        raise BlobError(path, f"unknown dtype code {code}")
    dtype = DTYPES[code]
    expected = HEADER.size + b * h * w * dtype.itemsize
    if len(buf) != expected:
        raise BlobError(path, f"payload size {len(buf)} != {expected} for shape {(b, h, w)}")
    return np.frombuffer(buf, dtype=dtype, offset=HEADER.size).reshape(b, h, w).astype(np.float32)


def write_blob(path: str | Path, array: np.ndarray) -> str:
    """Write ``array`` and return the sha256 of the file contents."""
    buf = encode(array)
    Path(path).write_bytes(buf)
    return hashlib.sha256(buf).hexdigest()


def read_blob(path: str | Path, sha256: str | None = None, shape: tuple | None = None) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise BlobError(path, "file not found") from None
    if sha256 is not None and hashlib.sha256(buf).hexdigest() != sha256:
        raise BlobError(path, "checksum mismatch")
    arr = decode(buf, path)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise BlobError(path, f"shape {arr.shape} != expected {tuple(shape)}")
    return arr
