"""Flat binary container of named float64 arrays.

Layout (all little-endian):
    magic "STMAE1\\0\\0" (8 bytes)
    per entry: name length (u32), UTF-8 name, rank (u32),
               extents (u64 each), float64 data
Entries are written sorted by name so identical dicts produce identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STMAE1\x00\x00"


class CheckpointError(IOError):
    """Malformed or truncated checkpoint container."""


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    arrays: dict[str, np.ndarray] = {}
    pos = 8
    n = len(blob)
    while pos < n:
        pos, (name_len,) = _unpack(blob, pos, "<I", path)
        if pos + name_len > n:
            raise CheckpointError(f"{path}: truncated name")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        pos, (rank,) = _unpack(blob, pos, "<I", path)
        pos, shape = _unpack(blob, pos, f"<{rank}Q", path)
        count = int(np.prod(shape)) if rank else 1
        nbytes = count * 8
        if pos + nbytes > n:
            raise CheckpointError(f"{path}: truncated data for '{name}'")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.float64)
        pos += nbytes
    return arrays


def _unpack(blob: bytes, pos: int, fmt: str, path) -> tuple[int, tuple]:
    size = struct.calcsize(fmt)
    if pos + size > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    return pos + size, struct.unpack_from(fmt, blob, pos)
