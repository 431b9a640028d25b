"""Flat binary parameter archive.

Layout (all little-endian):

    magic   4 bytes  b"SPCK"
    version 1 byte   0x01
    count   u32
    entry * count:
        path_len  u16
        path      utf-8 bytes
        ndim      u8
        dims      ndim * u32
        payload   prod(dims) * float32

Entries are written in sorted path order so identical parameter maps
produce identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    items = sorted(arrays.items())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version = raw[4]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported archive version {version}")
    (count,) = struct.unpack_from("<I", raw, 5)
    offset = 9
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (plen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + plen].decode("utf-8")
        offset += plen
        ndim = raw[offset]
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(dims)
        offset += 4 * n
        out[name] = arr.copy()
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return out
