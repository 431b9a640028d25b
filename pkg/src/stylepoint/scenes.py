"""Synthetic textured scenes with exact ground-truth rendering.

Scenes are sets of textured rectangles ray-cast analytically, so any pose
in the valid neighborhood yields pixel-exact RGB and z-distance depth.
These stand in for the photo datasets the training recipe normally draws
from; procedural textures double as style images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraSpec

SCENE_KINDS = ("boxes", "planes", "room")


# ---------------------------------------------------------------------------
# procedural textures: deterministic (a, b) in [0,1]^2 -> RGB


@dataclass
class Texture:
    kind: str                      # checker | stripes | gradient | noise
    c1: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.3, 0.2]))
    c2: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.3, 0.8]))
    freq: float = 4.0
    angle: float = 0.0
    grid: np.ndarray | None = None  # for noise: fixed random lattice (g, g, 3)

    def sample(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        c1 = self.c1.reshape(1, 3)
        c2 = self.c2.reshape(1, 3)
        if self.kind == "checker":
            cell = (np.floor(a * self.freq) + np.floor(b * self.freq)) % 2
            return np.where(cell[:, None] > 0.5, c1, c2)
        if self.kind == "stripes":
            phase = a * np.cos(self.angle) + b * np.sin(self.angle)
            s = 0.5 + 0.5 * np.sin(2 * np.pi * self.freq * phase)
            return c1 * s[:, None] + c2 * (1 - s[:, None])
        if self.kind == "gradient":
            wa, wb = a[:, None], b[:, None]
            return c1 * (1 - wa) * (1 - wb) + c2 * wa * wb \
                + 0.5 * (c1 + c2) * (wa * (1 - wb) + (1 - wa) * wb)
        if self.kind == "noise":
            g = self.grid
            n = g.shape[0] - 1
            x = np.clip(a, 0, 1) * n
            y = np.clip(b, 0, 1) * n
            x0 = np.minimum(x.astype(np.int64), n - 1)
            y0 = np.minimum(y.astype(np.int64), n - 1)
            fx = (x - x0)[:, None]
            fy = (y - y0)[:, None]
            return (g[y0, x0] * (1 - fx) * (1 - fy) + g[y0, x0 + 1] * fx * (1 - fy)
                    + g[y0 + 1, x0] * (1 - fx) * fy + g[y0 + 1, x0 + 1] * fx * fy)
        raise ValueError(f"unknown texture kind '{self.kind}'")


def _noise_texture(rng: np.random.Generator, cells: int = 5) -> Texture:
    grid = rng.uniform(0.1, 0.9, size=(cells + 1, cells + 1, 3))
    return Texture("noise", grid=grid)


# ---------------------------------------------------------------------------
# geometry


@dataclass
class Rect:
    """corner + a*eu + b*ev for (a, b) in [0,1]^2."""
    corner: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    texture: Texture

    def __post_init__(self):
        self.corner = np.asarray(self.corner, dtype=np.float64)
        self.eu = np.asarray(self.eu, dtype=np.float64)
        self.ev = np.asarray(self.ev, dtype=np.float64)
        self.normal = np.cross(self.eu, self.ev)


class SyntheticScene:
    def __init__(self, kind: str, seed: int, rects: list[Rect], canonical: CameraSpec):
        self.kind = kind
        self.seed = seed
        self.rects = rects
        self.canonical = canonical

    def render(self, cam: CameraSpec) -> tuple[np.ndarray, np.ndarray]:
        """Exact ray-cast: (rgb (H,W,3) float32 in [0,1], depth (H,W) float32).

        Depth is the camera z-distance of the nearest hit; +inf where no
        rectangle is hit (scenes are built so the canonical frustum and its
        sampling neighborhood are fully covered).
        """
        h, w = cam.height, cam.width
        iy, ix = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        u = (ix.reshape(-1) + 0.5 - cam.cx) / cam.fx
        v = (iy.reshape(-1) + 0.5 - cam.cy) / cam.fy
        d_cam = np.stack([u, v, np.ones_like(u)], axis=1)
        d_world = d_cam @ cam.rotation  # R^T rows
        origin = -cam.translation @ cam.rotation

        best_t = np.full(h * w, np.inf)
        rgb = np.zeros((h * w, 3))
        for rect in self.rects:
            denom = d_world @ rect.normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((rect.corner - origin) @ rect.normal) / denom
            hit = origin + t[:, None] * d_world - rect.corner
            a = hit @ rect.eu / (rect.eu @ rect.eu)
            b = hit @ rect.ev / (rect.ev @ rect.ev)
            ok = (np.abs(denom) > 1e-12) & (t > 1e-6) & (t < best_t) \
                & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
            if ok.any():
                rgb[ok] = np.clip(rect.texture.sample(a[ok], b[ok]), 0.0, 1.0)
                best_t[ok] = t[ok]
        return (rgb.reshape(h, w, 3).astype(np.float32),
                best_t.reshape(h, w).astype(np.float32))


def _canonical_camera(size: int) -> CameraSpec:
    return CameraSpec(fx=float(size), fy=float(size), cx=size / 2.0, cy=size / 2.0,
                      width=size, height=size)


def _axis_box(center, half, textures) -> list[Rect]:
    """Front (-z), top, left and right faces of an axis-aligned box."""
    cx, cy, cz = center
    hx, hy, hz = half
    tx = list(textures)
    return [
        Rect([cx - hx, cy - hy, cz - hz], [2 * hx, 0, 0], [0, 2 * hy, 0], tx[0 % len(tx)]),
        Rect([cx - hx, cy - hy, cz - hz], [2 * hx, 0, 0], [0, 0, 2 * hz], tx[1 % len(tx)]),
        Rect([cx - hx, cy - hy, cz - hz], [0, 2 * hy, 0], [0, 0, 2 * hz], tx[2 % len(tx)]),
        Rect([cx + hx, cy - hy, cz - hz], [0, 2 * hy, 0], [0, 0, 2 * hz], tx[3 % len(tx)]),
    ]


def make_scene(kind: str, seed: int, size: int = 64) -> SyntheticScene:
    """Deterministic scene of the requested kind; depth range roughly [1.5, 4.5]."""
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind '{kind}' (expected one of {SCENE_KINDS})")
    rng = np.random.default_rng([SCENE_KINDS.index(kind), seed])
    cam = _canonical_camera(size)

    def jitter_color(base):
        return np.clip(np.asarray(base) + rng.uniform(-0.15, 0.15, 3), 0.05, 0.95)

    wall_z = 4.2
    ext = wall_z * 0.75 + 0.6  # covers the frustum for sampled poses too
    back = Rect([-ext, -ext, wall_z], [2 * ext, 0, 0], [0, 2 * ext, 0],
                _noise_texture(rng))
    rects = [back]

    if kind == "boxes":
        for i in range(2):
            cx = rng.uniform(-0.7, 0.7)
            cy = rng.uniform(-0.5, 0.5)
            cz = rng.uniform(2.2, 3.2)
            half = rng.uniform(0.3, 0.55, 3)
            t1 = Texture("stripes", jitter_color([0.85, 0.4, 0.2]),
                         jitter_color([0.15, 0.5, 0.8]),
                         freq=rng.uniform(1.5, 3.0), angle=rng.uniform(0, np.pi))
            t2 = Texture("gradient", jitter_color([0.2, 0.8, 0.4]),
                         jitter_color([0.7, 0.2, 0.7]))
            rects.extend(_axis_box([cx, cy, cz], half, [t1, t2, t2, t1]))
    elif kind == "planes":
        for i in range(3):
            z = 1.8 + i * 0.8 + rng.uniform(-0.15, 0.15)
            x0 = rng.uniform(-1.3, 0.1)
            y0 = rng.uniform(-1.1, -0.2)
            span = rng.uniform(0.9, 1.5)
            tilt = rng.uniform(-0.4, 0.4)
            tex = Texture("stripes", jitter_color([0.9, 0.6, 0.2]),
                          jitter_color([0.2, 0.25, 0.6]),
                          freq=rng.uniform(1.0, 2.5), angle=rng.uniform(0, np.pi))
            rects.append(Rect([x0, y0, z], [span, 0, tilt], [0, span, -tilt], tex))
    else:  # room: floor, ceiling, side walls leaning inwards toward the back wall
        g1 = Texture("gradient", jitter_color([0.75, 0.7, 0.3]), jitter_color([0.3, 0.3, 0.7]))
        g2 = Texture("gradient", jitter_color([0.4, 0.7, 0.65]), jitter_color([0.7, 0.35, 0.3]))
        s = Texture("stripes", jitter_color([0.8, 0.5, 0.3]), jitter_color([0.25, 0.4, 0.7]),
                    freq=2.0, angle=0.3)
        span = 2 * ext
        rects.extend([
            Rect([-ext, 1.15, 1.0], [span, 0, 0], [0, 0.9, wall_z - 1.0], g1),   # floor
            Rect([-ext, -2.05, 1.0], [span, 0, 0], [0, 0.9, wall_z - 1.0], g2),  # ceiling
            Rect([-2.05, -ext, 1.0], [0, span, 0], [0.9, 0, wall_z - 1.0], s),   # left
            Rect([1.15, -ext, 1.0], [0, span, 0], [0.9, 0, wall_z - 1.0], s),    # right
        ])
    return SyntheticScene(kind, seed, rects, cam)


# ---------------------------------------------------------------------------
# procedural style images (WikiArt stand-ins)


def make_style_image(seed: int, size: int = 64) -> np.ndarray:
    """One procedural style raster: perlin-ish noise, stripes or color patches."""
    rng = np.random.default_rng([7, seed])
    kind = ("noise", "stripes", "patches")[int(rng.integers(3))]
    iy, ix = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    a = (ix.reshape(-1) + 0.5) / size
    b = (iy.reshape(-1) + 0.5) / size
    if kind == "noise":
        img = np.zeros((size * size, 3))
        for octave, amp in ((3, 0.55), (7, 0.3), (13, 0.15)):
            tex = _noise_texture(rng, cells=octave)
            img += amp * tex.sample(a, b)
    elif kind == "stripes":
        tex = Texture("stripes",
                      rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3),
                      freq=rng.uniform(3, 9), angle=rng.uniform(0, np.pi))
        img = tex.sample(a, b)
    else:
        img = np.full((size * size, 3), rng.uniform(0.2, 0.8, 3))
        img = img.reshape(size, size, 3)
        for _ in range(int(rng.integers(6, 12))):
            x0, y0 = rng.integers(0, size - 8, 2)
            pw, ph = rng.integers(6, max(7, size // 2), 2)
            img[y0:y0 + ph, x0:x0 + pw] = rng.uniform(0.05, 0.95, 3)
        img = img.reshape(-1, 3)
    return np.clip(img.reshape(size, size, 3), 0.0, 1.0).astype(np.float32)
