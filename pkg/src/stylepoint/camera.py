"""Pinhole cameras, back-projection and NDC normalization.

Conventions:
  * pose is world -> camera: x_cam = R @ x_world + t, camera looks down +z
  * depth is the z-distance along the optical axis (not ray length)
  * pixel (ix, iy) has its center at image-plane coordinate (ix+0.5, iy+0.5)
  * points are stored row-major in pixel order (front-to-back within an
    LDI pixel), which fixes point order for reproducible tests
  * NDC: x,y affine in image coordinates, z linear in disparity 1/Z, so
    the frustum [near, far] maps onto the [-1, 1] cube with z=+1 at near
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CameraSpec:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3, dtype=np.float64))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float64))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{self.width}x{self.height}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-5:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.2e})")

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.translation) @ self.rotation

    def project(self, pts_world: np.ndarray):
        """World points -> (uv pixel coordinates (N,2), camera z (N,))."""
        cam = self.world_to_camera(pts_world)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    @property
    def pose_matrix(self) -> np.ndarray:
        """3x4 [R|t], row-major — the wire format for poses."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraSpec":
        return CameraSpec(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                          np.asarray(rotation, dtype=np.float64).copy(),
                          np.asarray(translation, dtype=np.float64).copy())

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "pose": self.pose_matrix.reshape(-1).tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "CameraSpec":
        pose = np.asarray(d["pose"], dtype=np.float64).reshape(3, 4)
        return CameraSpec(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                          pose[:, :3], pose[:, 3])

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @staticmethod
    def load(path) -> "CameraSpec":
        with open(path) as f:
            return CameraSpec.from_json(json.load(f))


@dataclass
class DepthRaster:
    values: np.ndarray              # (H, W) float32, z-distance in meters
    mask: np.ndarray | None = None  # valid pixels; None means all valid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        self.mask = np.asarray(self.mask, dtype=bool)
        valid = self.values[self.mask]
        if valid.size and (not np.all(np.isfinite(valid)) or valid.min() <= 0):
            raise ValueError("valid depths must be strictly positive and finite")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class LayeredDepthRaster:
    """Per-pixel front-to-back (depth, RGB) layers, stored flat in row-major pixel order."""
    width: int
    height: int
    counts: np.ndarray   # (H, W) uint8
    depths: np.ndarray   # (M,) float32
    colors: np.ndarray   # (M, 3) float32 in [0, 1]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.uint8)
        self.depths = np.asarray(self.depths, dtype=np.float32)
        self.colors = np.asarray(self.colors, dtype=np.float32)
        if int(self.counts.sum()) != len(self.depths):
            raise ValueError(f"layer count sum {int(self.counts.sum())} != {len(self.depths)} layers")
        offsets = np.concatenate([[0], np.cumsum(self.counts.reshape(-1))]).astype(np.int64)
        for p in range(self.counts.size):
            d = self.depths[offsets[p]:offsets[p + 1]]
            if d.size and (d.min() <= 0 or np.any(np.diff(d) <= 0)):
                raise ValueError(f"pixel {p}: layer depths must be strictly increasing and positive")


@dataclass
class NdcRecord:
    """Everything needed to invert the NDC map."""
    near: float
    far: float
    anchor: CameraSpec


@dataclass
class ScenePointCloud:
    positions: np.ndarray    # (N, 3) NDC
    colors: np.ndarray       # (N, 3) in [0, 1]
    pixel_index: np.ndarray  # (N,) source pixel (iy * width + ix) in the anchor raster
    record: NdcRecord

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("point cloud must contain at least one point")

    def __len__(self) -> int:
        return len(self.positions)


def back_project(image: np.ndarray, depth, cam: CameraSpec):
    """Lift (pixel, layer) samples to world-space colored points.

    Returns (points_world (N,3) float64, colors (N,3) float32, pixel_index (N,)).
    Accepts a DepthRaster (one layer per valid pixel) or a LayeredDepthRaster.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    if isinstance(depth, DepthRaster):
        if (depth.height, depth.width) != (h, w):
            raise ValueError(f"image {h}x{w} does not match depth {depth.height}x{depth.width}")
        iy, ix = np.nonzero(depth.mask)
        if len(iy) == 0:
            raise ValueError("depth raster has zero valid pixels")
        d = depth.values[iy, ix].astype(np.float64)
        colors = image[iy, ix]
        pixel_index = (iy * w + ix).astype(np.int64)
    elif isinstance(depth, LayeredDepthRaster):
        if (depth.height, depth.width) != (h, w):
            raise ValueError(f"image {h}x{w} does not match LDI {depth.height}x{depth.width}")
        if depth.depths.size == 0:
            raise ValueError("LDI has zero layers")
        counts = depth.counts.reshape(-1).astype(np.int64)
        pixel_index = np.repeat(np.arange(h * w, dtype=np.int64), counts)
        iy, ix = pixel_index // w, pixel_index % w
        d = depth.depths.astype(np.float64)
        colors = depth.colors
    else:
        raise TypeError(f"unsupported depth type {type(depth).__name__}")

    u = ix + 0.5
    v = iy + 0.5
    x = d * (u - cam.cx) / cam.fx
    y = d * (v - cam.cy) / cam.fy
    pts_cam = np.stack([x, y, d], axis=1)
    pts_world = cam.camera_to_world(pts_cam)
    return pts_world, np.asarray(colors, dtype=np.float32), pixel_index


def normalize_ndc(points_world: np.ndarray, colors: np.ndarray,
                  pixel_index: np.ndarray, anchor: CameraSpec,
                  near: float, far: float) -> ScenePointCloud:
    """Map world points into the anchor camera's [-1,1] NDC cube.

    x,y are affine in image coordinates; z is linear in disparity with
    z_ndc=+1 at near and -1 at far, so in-frustum points with depth in
    [near, far] land inside the cube with no clamping.
    """
    if not near < far:
        raise ValueError(f"near ({near}) must be < far ({far})")
    cam = anchor.world_to_camera(np.asarray(points_world, dtype=np.float64))
    z = cam[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if len(bad):
        raise ValueError(f"point {int(bad[0])} at or behind the anchor camera plane (z={z[bad[0]]:.4g})")
    u = anchor.fx * cam[:, 0] / z + anchor.cx
    v = anchor.fy * cam[:, 1] / z + anchor.cy
    x_ndc = 2.0 * u / anchor.width - 1.0
    y_ndc = 2.0 * v / anchor.height - 1.0
    inv_near, inv_far = 1.0 / near, 1.0 / far
    z_ndc = 2.0 * (1.0 / z - inv_far) / (inv_near - inv_far) - 1.0
    positions = np.stack([x_ndc, y_ndc, z_ndc], axis=1).astype(np.float32)
    return ScenePointCloud(positions, np.asarray(colors, dtype=np.float32),
                           np.asarray(pixel_index, dtype=np.int64),
                           NdcRecord(float(near), float(far), anchor))


def denormalize(p_ndc: np.ndarray, record: NdcRecord) -> np.ndarray:
    """Invert normalize_ndc back to world space."""
    p = np.asarray(p_ndc, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if np.any(np.abs(p[:, 2]) > 1.0 + 1e-5):
        worst = float(np.abs(p[:, 2]).max())
        raise ValueError(f"z_ndc outside [-1, 1] (max |z|={worst:.4g}); not produced by this record")
    a = record.anchor
    inv_near, inv_far = 1.0 / record.near, 1.0 / record.far
    disparity = (p[:, 2] + 1.0) / 2.0 * (inv_near - inv_far) + inv_far
    z = 1.0 / disparity
    u = (p[:, 0] + 1.0) / 2.0 * a.width
    v = (p[:, 1] + 1.0) / 2.0 * a.height
    x = (u - a.cx) * z / a.fx
    y = (v - a.cy) * z / a.fy
    world = a.camera_to_world(np.stack([x, y, z], axis=1))
    return world[0] if single else world


def scene_depth_bounds(depths: np.ndarray) -> tuple[float, float]:
    """Per-scene frustum bounds: 5% margin around the observed depth range."""
    return 0.95 * float(np.min(depths)), 1.05 * float(np.max(depths))


def merge_views(views, center_index: int = 0) -> ScenePointCloud:
    """Union of back-projected views in the NDC frame of the center view.

    ``views`` is a list of (image, depth, CameraSpec) in a shared world
    frame. near/far come from the pooled per-point depth measured in the
    anchor frame (the anchor view's own depths enter verbatim), with the
    usual 5% margin, so a single view reduces exactly to
    back_project + normalize_ndc.
    """
    if not views:
        raise ValueError("merge_views needs at least one view")
    anchor = views[center_index][2]
    all_pts, all_colors, all_pix, all_anchor_z = [], [], [], []
    for i, (image, depth, cam) in enumerate(views):
        try:
            pts, colors, pix = back_project(image, depth, cam)
        except ValueError as e:
            warnings.warn(f"view {i} skipped: {e}")
            continue
        if i == center_index:
            # exact: anchor-frame z of the anchor's own points is its depth
            if isinstance(depth, DepthRaster):
                zs = depth.values[depth.mask].astype(np.float64)
            else:
                zs = depth.depths.astype(np.float64)
        else:
            zs = anchor.world_to_camera(pts)[:, 2]
        all_pts.append(pts)
        all_colors.append(colors)
        all_pix.append(pix)
        all_anchor_z.append(zs)
    if not all_pts:
        raise ValueError("all views had empty valid depth")
    pts = np.concatenate(all_pts)
    colors = np.concatenate(all_colors)
    pix = np.concatenate(all_pix)
    near, far = scene_depth_bounds(np.concatenate(all_anchor_z))
    return normalize_ndc(pts, colors, pix, anchor, near, far)


def cloud_from_view(image: np.ndarray, depth: DepthRaster, cam: CameraSpec) -> ScenePointCloud:
    """Single-view scene construction (the common inference entry)."""
    return merge_views([(image, depth, cam)], 0)
