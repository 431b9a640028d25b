"""On-disk formats: DPTH depth rasters, LDI0 layered depth, PLY export, PNG.

DPTH: magic "DPTH", u32 width, u32 height, then width*height little-endian
float32 row-major; NaN marks an invalid pixel.

LDI0: magic "LDI0", u32 width, u32 height, then per pixel (row-major) a u8
layer count followed by (float32 depth, 3x u8 RGB) per layer, front to back.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import DepthRaster, LayeredDepthRaster, ScenePointCloud, denormalize

DEPTH_MAGIC = b"DPTH"
LDI_MAGIC = b"LDI0"


def write_depth(path: str | Path, depth: DepthRaster) -> None:
    values = depth.values.astype("<f4").copy()
    values[~depth.mask] = np.nan
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", depth.width, depth.height))
        f.write(values.tobytes())


def read_depth(path: str | Path) -> DepthRaster:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != DEPTH_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {DEPTH_MAGIC!r}")
    w, h = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * w * h
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected} for {w}x{h}")
    values = np.frombuffer(raw, dtype="<f4", count=w * h, offset=12).reshape(h, w)
    return DepthRaster(values.copy())


def write_ldi(path: str | Path, ldi: LayeredDepthRaster) -> None:
    parts = [LDI_MAGIC, struct.pack("<II", ldi.width, ldi.height)]
    offsets = np.concatenate([[0], np.cumsum(ldi.counts.reshape(-1))]).astype(np.int64)
    rgb8 = np.clip(np.round(ldi.colors * 255.0), 0, 255).astype(np.uint8)
    for p in range(ldi.counts.size):
        lo, hi = offsets[p], offsets[p + 1]
        parts.append(struct.pack("<B", hi - lo))
        for k in range(lo, hi):
            parts.append(struct.pack("<f", float(ldi.depths[k])))
            parts.append(rgb8[k].tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_ldi(path: str | Path) -> LayeredDepthRaster:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != LDI_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {LDI_MAGIC!r}")
    w, h = struct.unpack_from("<II", raw, 4)
    offset = 12
    counts = np.zeros(h * w, dtype=np.uint8)
    depths, colors = [], []
    for p in range(h * w):
        counts[p] = raw[offset]
        offset += 1
        for _ in range(counts[p]):
            (d,) = struct.unpack_from("<f", raw, offset)
            offset += 4
            rgb = np.frombuffer(raw, dtype=np.uint8, count=3, offset=offset)
            offset += 3
            depths.append(d)
            colors.append(rgb.astype(np.float32) / 255.0)
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    depths_arr = np.asarray(depths, dtype=np.float32)
    colors_arr = np.asarray(colors, dtype=np.float32).reshape(-1, 3)
    return LayeredDepthRaster(w, h, counts.reshape(h, w), depths_arr, colors_arr)


def write_ply(path: str | Path, cloud: ScenePointCloud, world: bool = True) -> None:
    """ASCII PLY with x y z red green blue (world space unless world=False)."""
    pts = denormalize(cloud.positions, cloud.record) if world else cloud.positions
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(pts)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for p, c in zip(pts, rgb):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n")


def write_png(path: str | Path, image: np.ndarray) -> None:
    """Save a float image in [0,1] (H,W,3) as 8-bit RGB PNG."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    import io

    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path: str | Path) -> np.ndarray:
    """Load an RGB PNG as float32 in [0,1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0
