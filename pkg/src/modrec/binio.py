"""Binary file formats for feature tables and model checkpoints.

Both formats are little-endian and share the same header discipline:
a 4-byte magic, a version byte, and fixed-width counts before any payload.

Feature table (``MMFE``)::

    magic "MMFE" | version u8 = 1 | dtype u8 = 0 (float32) | reserved u16 = 0
    | n_items u32 | dim u32
    | id table: n_items x (len u16 | UTF-8 bytes)
    | payload: n_items * dim float32, row-major, in id-table order

Checkpoint (``MMCK``)::

    magic "MMCK" | version u8 = 1 | reserved u8 = 0 | reserved u16 = 0
    | n_tensors u32
    | per tensor: name (len u16 | UTF-8) | dtype u8 (0=f32, 1=f64)
    | ndim u8 | dims u32 x ndim | payload row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MMFE_MAGIC = b"MMFE"
MMCK_MAGIC = b"MMCK"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class BinaryFormatError(ValueError):
    """Raised on magic/version mismatch or a truncated payload."""


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BinaryFormatError(
                f"{self.path}: truncated payload (wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def write_feature_file(path, item_ids: list[str], matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(item_ids):
        raise ValueError("matrix must be 2-D with one row per item id")
    n_items, dim = matrix.shape
    parts = [MMFE_MAGIC, struct.pack("<BBHII", 1, 0, 0, n_items, dim)]
    for item_id in item_ids:
        raw = item_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"item id too long: {item_id[:32]}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(matrix.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_feature_file(path) -> tuple[list[str], np.ndarray]:
    rd = _Reader(Path(path).read_bytes(), str(path))
    magic = rd.take(4)
    if magic != MMFE_MAGIC:
        raise BinaryFormatError(f"{path}: bad magic {magic!r}, expected {MMFE_MAGIC!r}")
    version, dtype_code, _reserved, n_items, dim = rd.unpack("BBHII")
    if version != 1:
        raise BinaryFormatError(f"{path}: unsupported version {version}")
    if dtype_code != 0:
        raise BinaryFormatError(f"{path}: unsupported dtype code {dtype_code}")
    item_ids = []
    for _ in range(n_items):
        (length,) = rd.unpack("H")
        item_ids.append(rd.take(length).decode("utf-8"))
    payload = rd.take(4 * n_items * dim)
    if rd.pos != len(rd.data):
        raise BinaryFormatError(f"{path}: {len(rd.data) - rd.pos} trailing bytes after payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n_items, dim).copy()
    return item_ids, matrix


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [MMCK_MAGIC, struct.pack("<BBHI", 1, 0, 0, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            arr = arr.astype(np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    rd = _Reader(Path(path).read_bytes(), str(path))
    magic = rd.take(4)
    if magic != MMCK_MAGIC:
        raise BinaryFormatError(f"{path}: bad magic {magic!r}, expected {MMCK_MAGIC!r}")
    version, _r1, _r2, n_tensors = rd.unpack("BBHI")
    if version != 1:
        raise BinaryFormatError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = rd.unpack("H")
        name = rd.take(name_len).decode("utf-8")
        dtype_code, ndim = rd.unpack("BB")
        if dtype_code not in _DTYPES:
            raise BinaryFormatError(f"{path}: unknown dtype code {dtype_code} for tensor {name}")
        shape = rd.unpack(f"{ndim}I")
        dtype = _DTYPES[dtype_code]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = rd.take(dtype.itemsize * count)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if rd.pos != len(rd.data):
        raise BinaryFormatError(f"{path}: {len(rd.data) - rd.pos} trailing bytes after payload")
    return tensors
