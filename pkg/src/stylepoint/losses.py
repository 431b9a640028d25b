"""Training losses: multi-view consistency, view synthesis, stylization.

The consistency term penalizes, for every scene point co-visible in a
pair of rendered views, the L1 difference between the decoded colors
bilinearly sampled at the point's projections; it is normalized by the
number of visible (point, pair) triples. Visibility is a detached hard
indicator from the rasterizer's z-buffers.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .pyramid import pyramid_features
from .renderer import RenderedView, covisibility
from .stylizer import _standardize_np


def bilinear_sample(image: Tensor, uv: np.ndarray) -> Tensor:
    """Sample (H,W,C) at continuous pixel coords (P,2); border-clamped taps.

    Geometry is constant: the result is linear in the image, so gradients
    flow to the four tap pixels with the bilinear weights.
    """
    h, w, c = image.shape
    base = np.floor(uv - 0.5)
    frac = (uv - 0.5) - base
    ix0 = np.clip(base[:, 0].astype(np.int64), 0, w - 1)
    iy0 = np.clip(base[:, 1].astype(np.int64), 0, h - 1)
    ix1 = np.minimum(ix0 + 1, w - 1)
    iy1 = np.minimum(iy0 + 1, h - 1)
    fx = frac[:, 0].astype(np.float32)
    fy = frac[:, 1].astype(np.float32)
    flat = ops.reshape(image, (h * w, c))
    idx = np.stack([iy0 * w + ix0, iy0 * w + ix1, iy1 * w + ix0, iy1 * w + ix1], axis=1)
    wgt = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return ops.weighted_gather(flat, idx, wgt)


def consistency_loss(views: list[RenderedView]) -> Tensor:
    """Eq-style sum over points and view pairs of |I_i(pi_i(p)) - I_j(pi_j(p))|_1,
    normalized by the count of visible triples. Zero when no triple is visible."""
    if len(views) < 2:
        raise ValueError(f"consistency loss needs at least 2 views, got {len(views)}")
    total = None
    count = 0
    for i in range(len(views)):
        for j in range(i + 1, len(views)):
            mask = covisibility(views[i], views[j])
            n = int(mask.sum())
            if n == 0:
                continue
            count += n
            ci = bilinear_sample(views[i].image, views[i].point_uv[mask])
            cj = bilinear_sample(views[j].image, views[j].point_uv[mask])
            term = ops.reduce_sum(ops.abs_(ops.sub(ci, cj)))
            total = term if total is None else ops.add(total, term)
    if total is None:
        return Tensor(np.float32(0.0))
    return ops.mul(total, np.float32(1.0 / count))


def _l1(a: Tensor, b: np.ndarray) -> Tensor:
    return ops.reduce_mean(ops.abs_(ops.sub(a, Tensor(b))))


def _mse(a: Tensor, b) -> Tensor:
    diff = ops.sub(a, b if isinstance(b, Tensor) else Tensor(b))
    return ops.reduce_mean(ops.mul(diff, diff))


def view_synthesis_loss(views: list[RenderedView], gt_images: list[np.ndarray],
                        pyramid_weights: dict[str, np.ndarray],
                        weights: dict | None = None):
    """L_view = L_rgb + L_feat + L_cns (unit weights unless overridden).

    L_rgb is mean absolute pixel error; L_feat sums the per-level MSE of
    frozen-pyramid features over all three levels.
    """
    if len(views) != len(gt_images):
        raise ValueError(f"{len(views)} rendered views vs {len(gt_images)} ground-truth images")
    for v, g in zip(views, gt_images):
        if tuple(v.image.shape) != tuple(np.asarray(g).shape):
            raise ValueError(f"rendered {v.image.shape} vs ground truth {np.asarray(g).shape}")
    w = {"rgb": 1.0, "feat": 1.0, "cns": 1.0}
    w.update(weights or {})

    batch = ops.concat([ops.reshape(v.image, (1,) + v.image.shape) for v in views], axis=0)
    gt = np.stack([np.asarray(g, dtype=np.float32) for g in gt_images])
    l_rgb = _l1(batch, gt)

    rendered_levels = pyramid_features(batch, pyramid_weights)
    gt_levels = pyramid_features(gt, pyramid_weights)
    l_feat = None
    for r, g in zip(rendered_levels, gt_levels):
        term = _mse(r, g.numpy())
        l_feat = term if l_feat is None else ops.add(l_feat, term)

    l_cns = consistency_loss(views) if len(views) >= 2 else Tensor(np.float32(0.0))
    total = ops.add(ops.add(ops.mul(l_rgb, np.float32(w["rgb"])),
                            ops.mul(l_feat, np.float32(w["feat"]))),
                    ops.mul(l_cns, np.float32(w["cns"])))
    parts = {"l_rgb": l_rgb.item(), "l_feat": l_feat.item(), "l_cns": l_cns.item()}
    return total, parts


def _spatial_stats(level: Tensor):
    """Per-view, per-channel mean and std over the spatial grid."""
    mu = ops.reduce_mean(level, axis=(1, 2))
    mu2 = ops.reduce_mean(ops.mul(level, level), axis=(1, 2))
    var = ops.clamp_min(ops.sub(mu2, ops.mul(mu, mu)), 0.0)
    sigma = ops.sqrt(ops.add(var, np.float32(1e-8)))
    return mu, sigma


def adaattn_target(content_feats: np.ndarray, style_feats: np.ndarray,
                   loss_attn: dict[str, np.ndarray], eps: float = 1e-5) -> np.ndarray:
    """Constant local-loss target: the attention modulation applied on 2D
    grids with fixed, never-trained attention weights (no gradient)."""
    c_std = _standardize_np(content_feats, eps)
    k_std = _standardize_np(style_feats, eps)
    q = c_std @ loss_attn["loss_attn.wq"]
    k = k_std @ loss_attn["loss_attn.wk"]
    logits = (q @ k.T) / np.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=1, keepdims=True)
    v = style_feats @ loss_attn["loss_attn.wv"]
    mean = attn @ v
    var = np.maximum(attn @ (v * v) - mean * mean, 0.0)
    return (np.sqrt(var) * c_std + mean).astype(np.float32)


def stylization_loss(views: list[RenderedView], style_image: np.ndarray,
                     content_images: list[np.ndarray],
                     pyramid_weights: dict[str, np.ndarray],
                     loss_attn: dict[str, np.ndarray],
                     include_consistency: bool = True,
                     weights: dict | None = None):
    """L_style = L_adaattn + L_cns, with L_adaattn = L_global + L_local.

    L_global matches per-channel spatial mean/std of the rendered views to
    the style image at every pyramid level; L_local pins the deepest level
    to an attention-modulated target built from the plain (unstylized)
    content view and the style image.
    """
    w = {"global": 1.0, "local": 1.0, "cns": 1.0}
    w.update(weights or {})
    batch = ops.concat([ops.reshape(v.image, (1,) + v.image.shape) for v in views], axis=0)
    rendered_levels = pyramid_features(batch, pyramid_weights)
    style_levels = [lv.numpy() for lv in
                    pyramid_features(np.asarray(style_image, np.float32)[None], pyramid_weights)]

    l_global = None
    for r, s in zip(rendered_levels, style_levels):
        mu_r, sd_r = _spatial_stats(r)
        # same guarded formula as the tensor path, so equal inputs cancel exactly
        mu_s = s.mean(axis=(0, 1, 2), dtype=np.float32)
        mu2_s = (s * s).mean(axis=(0, 1, 2), dtype=np.float32)
        sd_s = np.sqrt(np.maximum(mu2_s - mu_s * mu_s, 0.0) + np.float32(1e-8))
        term = ops.add(ops.reduce_sum(ops.mul(ops.sub(mu_r, mu_s), ops.sub(mu_r, mu_s))),
                       ops.reduce_sum(ops.mul(ops.sub(sd_r, sd_s), ops.sub(sd_r, sd_s))))
        l_global = term if l_global is None else ops.add(l_global, term)
    l_global = ops.mul(l_global, np.float32(1.0 / len(views)))

    content_batch = np.stack([np.asarray(c, dtype=np.float32) for c in content_images])
    content_deep = pyramid_features(content_batch, pyramid_weights)[-1].numpy()
    style_deep = style_levels[-1][0]
    s_flat = style_deep.reshape(-1, style_deep.shape[-1])
    deepest = rendered_levels[-1]
    b, hh, ww, cc = deepest.shape
    targets = np.stack([
        adaattn_target(content_deep[i].reshape(-1, cc), s_flat, loss_attn).reshape(hh, ww, cc)
        for i in range(b)])
    l_local = _mse(deepest, targets)

    l_cns = consistency_loss(views) if include_consistency and len(views) >= 2 \
        else Tensor(np.float32(0.0))
    total = ops.add(ops.add(ops.mul(l_global, np.float32(w["global"])),
                            ops.mul(l_local, np.float32(w["local"]))),
                    ops.mul(l_cns, np.float32(w["cns"])))
    parts = {"l_global": l_global.item(), "l_local": l_local.item(), "l_cns": l_cns.item()}
    return total, parts
