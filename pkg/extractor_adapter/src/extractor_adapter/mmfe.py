"""Writer for the benchmark's binary feature format.

Layout (little-endian): magic "MMFE" | version u8 = 1 | dtype u8 = 0
(float32) | reserved u16 = 0 | n_items u32 | dim u32 | per-item id
(len u16 | UTF-8 bytes) | float32 payload, row-major, in id order.

Files are written atomically (temp file + rename) so a crashed job never
leaves a truncated artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MMFE"


def write_mmfe(path, item_ids: list[str], matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(item_ids):
        raise ValueError("matrix must be 2-D with one row per item id")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("refusing to write non-finite feature values")
    n_items, dim = matrix.shape
    parts = [MAGIC, struct.pack("<BBHII", 1, 0, 0, n_items, dim)]
    for item_id in item_ids:
        raw = item_id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(matrix.tobytes())
    atomic_write_bytes(path, b"".join(parts))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
