"""Differentiable point rasterization and per-view visibility.

Each point splats onto a 2x2 bilinear footprint; tap weights are the
bilinear weight times a soft-z factor exp(-lambda * (z - z_min) / far)
referenced against a hard per-pixel z_min pass, then normalized per
pixel. With geometry fixed, the output feature map is linear in the
point features, so the backward pass is the transposed scatter with the
same weights. Gradients w.r.t. point positions are out of scope
(positions are fixed per scene).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .camera import CameraSpec, ScenePointCloud, denormalize

SOFT_Z_LAMBDA = 50.0
VISIBILITY_TAU = 1e-2


@dataclass
class SplatRecord:
    point_index: np.ndarray    # (E,) point of each surviving tap
    pixel_index: np.ndarray    # (E,) flat pixel of each tap
    bilinear: np.ndarray       # (E,) footprint weight
    weight: np.ndarray         # (E,) bilinear * soft-z, unnormalized
    normalized: np.ndarray     # (E,) weight / per-pixel weight sum
    behind_count: int = 0


@dataclass
class RenderedView:
    cam: CameraSpec
    feature_map: Tensor            # (H, W, C)
    zbuffer: np.ndarray            # (H, W), +inf where uncovered
    coverage: np.ndarray           # (H, W) bool
    point_visible: np.ndarray      # (N,) bool for this view
    point_uv: np.ndarray           # (N, 2) continuous pixel coords
    point_z: np.ndarray            # (N,) target-camera depth
    splat: SplatRecord
    image: Tensor | None = None    # decoded RGB, filled by render_view
    extras: dict = field(default_factory=dict)


def _footprint(uv: np.ndarray):
    """2x2 bilinear taps around each continuous pixel coordinate."""
    base = np.floor(uv - 0.5)
    frac = (uv - 0.5) - base
    ix0, iy0 = base[:, 0].astype(np.int64), base[:, 1].astype(np.int64)
    fx, fy = frac[:, 0], frac[:, 1]
    taps_ix = np.stack([ix0, ix0 + 1, ix0, ix0 + 1], axis=1)
    taps_iy = np.stack([iy0, iy0, iy0 + 1, iy0 + 1], axis=1)
    taps_w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                       (1 - fx) * fy, fx * fy], axis=1)
    return taps_ix, taps_iy, taps_w


def rasterize(cloud: ScenePointCloud, features, target: CameraSpec,
              lam: float = SOFT_Z_LAMBDA, tau: float = VISIBILITY_TAU) -> RenderedView:
    """Project point features into the target view's 2D feature map."""
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if len(feats.shape) != 2 or feats.shape[0] != len(cloud):
        raise ValueError(f"features {feats.shape} do not match cloud of {len(cloud)} points")
    h, w = target.height, target.width
    world = denormalize(cloud.positions, cloud.record)
    uv, z = target.project(world)
    in_front = z > 0
    behind = int((~in_front).sum())

    ix, iy, bw = _footprint(uv)
    pt_idx = np.broadcast_to(np.arange(len(cloud))[:, None], ix.shape)
    keep = (in_front[:, None] & (bw > 0)
            & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h))
    pt_idx = pt_idx[keep]
    pix = (iy[keep] * w + ix[keep]).astype(np.int64)
    bw = bw[keep].astype(np.float64)
    tap_z = z[pt_idx]

    zmin = np.full(h * w, np.inf)
    np.minimum.at(zmin, pix, tap_z)
    far = cloud.record.far
    soft = np.exp(-lam * (tap_z - zmin[pix]) / far)
    weight = bw * soft
    wsum = np.zeros(h * w)
    np.add.at(wsum, pix, weight)
    normalized = (weight / wsum[pix]).astype(np.float32)

    flat = ops.weighted_scatter(feats, pt_idx, pix, normalized, h * w)
    feature_map = ops.reshape(flat, (h, w, feats.shape[1]))
    coverage = (wsum > 0).reshape(h, w)
    zbuffer = zmin.reshape(h, w)

    visible = point_visibility(uv, z, zbuffer, tau)
    splat = SplatRecord(pt_idx, pix, bw.astype(np.float32),
                        weight.astype(np.float32), normalized, behind)
    return RenderedView(target, feature_map, zbuffer, coverage, visible, uv, z, splat)


def point_visibility(uv: np.ndarray, z: np.ndarray, zbuffer: np.ndarray,
                     tau: float = VISIBILITY_TAU) -> np.ndarray:
    """A point is visible when it projects inside the image and survives
    the z-buffer test at its containing pixel within relative tolerance tau."""
    h, w = zbuffer.shape
    inside = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    visible = np.zeros(len(uv), dtype=bool)
    if not inside.any():
        return visible
    px = np.floor(uv[inside, 0]).astype(np.int64)
    py = np.floor(uv[inside, 1]).astype(np.int64)
    zb = zbuffer[py, px]
    zi = z[inside]
    visible[inside] = np.isfinite(zb) & (np.abs(zi - zb) <= tau * zi)
    return visible


def covisibility(view_i: RenderedView, view_j: RenderedView) -> np.ndarray:
    """V(p; i, j): visible in both views (symmetric by construction)."""
    return view_i.point_visible & view_j.point_visible
