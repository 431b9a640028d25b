"""Warp-based multi-view consistency evaluation.

A pair of views is scored by transporting, for every co-visible scene
point, the color of view i at the point's projection to the point's pixel
in view j (nearest-pixel sampling on both ends, z-buffer conflicts
resolved nearest-first), then measuring RMSE against view j on the
transported mask. A frozen-pyramid feature distance replaces masked
LPIPS; its absolute values are not comparable to published LPIPS numbers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pyramid import pyramid_features
from .renderer import RenderedView, covisibility

LONG_RANGE_STRIDE = 7


@dataclass
class PairResult:
    i: int
    j: int
    kind: str  # "short" | "long"
    rmse: float
    feature_distance: float
    covisible_pixels: int


@dataclass
class ConsistencyReport:
    pairs: list[PairResult] = field(default_factory=list)
    excluded_pairs: list[tuple[int, int]] = field(default_factory=list)

    def _mean(self, kind: str, attr: str) -> float | None:
        vals = [getattr(p, attr) for p in self.pairs if p.kind == kind]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "pairs": [vars(p) for p in self.pairs],
            "excluded_pairs": [list(e) for e in self.excluded_pairs],
            "mean_rmse_short": self._mean("short", "rmse"),
            "mean_rmse_long": self._mean("long", "rmse"),
            "mean_feature_distance_short": self._mean("short", "feature_distance"),
            "mean_feature_distance_long": self._mean("long", "feature_distance"),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["i", "j", "kind", "rmse", "feature_distance", "covisible_pixels"])
            for p in self.pairs:
                w.writerow([p.i, p.j, p.kind, f"{p.rmse:.6f}",
                            f"{p.feature_distance:.6f}", p.covisible_pixels])


def _image_of(view: RenderedView) -> np.ndarray:
    if view.image is None:
        raise ValueError("view has no decoded image")
    img = view.image.numpy() if hasattr(view.image, "numpy") else np.asarray(view.image)
    return img.astype(np.float32)


def warp(view_i: RenderedView, view_j: RenderedView):
    """Transport view i's colors onto view j via the shared cloud.

    Returns (warped (H,W,3), mask (H,W) bool). Each co-visible point reads
    I_i at its containing pixel in view i and writes that color to its
    containing pixel in view j; when several points land on one target
    pixel the one nearest to camera j wins (ties: lowest point index).
    """
    img_i = _image_of(view_i)
    h, w = img_i.shape[:2]
    co = covisibility(view_i, view_j)
    if not co.any():
        raise ValueError(f"no co-visible points between views "
                         f"(visible i: {int(view_i.point_visible.sum())}, "
                         f"j: {int(view_j.point_visible.sum())})")
    src = np.floor(view_i.point_uv[co]).astype(np.int64)
    dst = np.floor(view_j.point_uv[co]).astype(np.int64)
    z_j = view_j.point_z[co]
    order = np.lexsort((np.arange(len(z_j)), z_j, dst[:, 1] * w + dst[:, 0]))
    pix = (dst[order, 1] * w + dst[order, 0])
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    sel = order[first]

    warped = np.zeros((h, w, 3), dtype=np.float32)
    mask = np.zeros((h, w), dtype=bool)
    warped[dst[sel, 1], dst[sel, 0]] = img_i[src[sel, 1], src[sel, 0]]
    mask[dst[sel, 1], dst[sel, 0]] = True
    return warped, mask


def masked_rmse(warped: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        raise ValueError("empty mask")
    diff = (warped[mask] - target[mask]).astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def masked_feature_distance(warped: np.ndarray, target: np.ndarray,
                            mask: np.ndarray,
                            pyramid_weights: dict[str, np.ndarray]) -> float:
    """Mask-weighted MSE of frozen-pyramid features on the mask's bounding box."""
    if not mask.any():
        raise ValueError("empty mask")
    ys, xs = np.nonzero(mask)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    # pad the crop so stride-2 levels stay aligned
    y1 = min(mask.shape[0], y0 + max(4, int(np.ceil((y1 - y0) / 4) * 4)))
    x1 = min(mask.shape[1], x0 + max(4, int(np.ceil((x1 - x0) / 4) * 4)))
    crop_w = np.asarray(warped[y0:y1, x0:x1], dtype=np.float32)
    crop_t = np.asarray(target[y0:y1, x0:x1], dtype=np.float32)
    crop_m = mask[y0:y1, x0:x1].astype(np.float32)
    fw = pyramid_features(crop_w[None], pyramid_weights)
    ft = pyramid_features(crop_t[None], pyramid_weights)
    total = 0.0
    for lw, lt in zip(fw, ft):
        a, b = lw.numpy()[0], lt.numpy()[0]
        hh, ww = a.shape[:2]
        sy = crop_m.shape[0] / hh
        sx = crop_m.shape[1] / ww
        # nearest-downsampled mask as per-location weight
        my = np.minimum((np.arange(hh) * sy).astype(np.int64), crop_m.shape[0] - 1)
        mx = np.minimum((np.arange(ww) * sx).astype(np.int64), crop_m.shape[1] - 1)
        wgt = crop_m[my][:, mx]
        if wgt.sum() == 0:
            wgt = np.ones_like(wgt)
        sq = ((a - b) ** 2).mean(axis=2)
        total += float((sq * wgt).sum() / wgt.sum())
    return total / len(fw)


def trajectory_pairs(n_views: int, stride: int = LONG_RANGE_STRIDE):
    """Adjacent ("short") plus strided ("long") index pairs along a trajectory."""
    pairs = [(i, i + 1, "short") for i in range(n_views - 1)]
    pairs += [(i, i + stride, "long") for i in range(n_views - stride)]
    return pairs


def consistency_rmse(views: list[RenderedView],
                     pyramid_weights: dict[str, np.ndarray],
                     stride: int = LONG_RANGE_STRIDE) -> ConsistencyReport:
    """RMSE + feature-distance report over adjacent and strided view pairs."""
    if len(views) < 2:
        raise ValueError(f"need at least 2 views, got {len(views)}")
    report = ConsistencyReport()
    for i, j, kind in trajectory_pairs(len(views), stride):
        try:
            warped, mask = warp(views[i], views[j])
        except ValueError:
            report.excluded_pairs.append((i, j))
            continue
        target = _image_of(views[j])
        report.pairs.append(PairResult(
            i, j, kind,
            masked_rmse(warped, target, mask),
            masked_feature_distance(warped, target, mask, pyramid_weights),
            int(mask.sum())))
    return report
