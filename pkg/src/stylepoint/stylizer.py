"""Attention-weighted adaptive instance normalization of point features.

Content features are mapped by a two-layer MLP, instance-standardized, and
modulated per point by an attention-weighted mean/std computed over the
style feature grid; a symmetric MLP maps the result back. Attention is
set-like over the style grid: permuting style locations does not change
the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .encoder import ContentFeatures
from .pyramid import STYLE_CHANNELS, StyleFeatures, orthogonal_init

ATTN_DIM = 256
INSTANCE_EPS = 1e-5
_VAR_GUARD = 1e-12  # keeps sqrt differentiable when the attention variance hits 0


@dataclass
class StylizedFeatures:
    positions: np.ndarray
    features: Tensor  # (N', 256)
    lineage: np.ndarray


def init_stylizer_params(rng: np.random.Generator, channels: int = 256):
    params: dict[str, Tensor] = {}

    def linear_init(ci, co):
        return Tensor((rng.standard_normal((ci, co)) * np.sqrt(2.0 / ci)).astype(np.float32),
                      requires_grad=True)

    for name in ("phi", "psi"):
        for layer in (1, 2):
            params[f"stylizer.{name}.l{layer}.w"] = linear_init(channels, channels)
            params[f"stylizer.{name}.l{layer}.b"] = Tensor(np.zeros(channels, np.float32),
                                                           requires_grad=True)
    params["stylizer.attn.wq"] = Tensor(orthogonal_init(rng, channels, ATTN_DIM), requires_grad=True)
    params["stylizer.attn.wk"] = Tensor(orthogonal_init(rng, STYLE_CHANNELS, ATTN_DIM), requires_grad=True)
    params["stylizer.attn.wv"] = Tensor(orthogonal_init(rng, STYLE_CHANNELS, channels), requires_grad=True)
    return params


def _mlp(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    h = ops.relu(ops.linear(x, params[f"stylizer.{name}.l1.w"], params[f"stylizer.{name}.l1.b"]))
    return ops.linear(h, params[f"stylizer.{name}.l2.w"], params[f"stylizer.{name}.l2.b"])


def attention_modulate(content: Tensor, style_features: np.ndarray,
                       wq: Tensor, wk: Tensor, wv: Tensor,
                       eps: float = INSTANCE_EPS):
    """Core AdaAttN step on already-mapped content features.

    Returns (modulated, internals) where internals exposes the attention
    map and the pre-sqrt variance for verification.
    """
    c_std = ops.instance_standardize(content, axis=0, eps=eps)
    k_std = Tensor(_standardize_np(style_features, eps))
    q = ops.matmul(c_std, wq)
    k = ops.matmul(k_std, wk)
    logits = ops.mul(ops.matmul(q, ops.transpose(k, (1, 0))),
                     np.float32(1.0 / np.sqrt(wq.shape[1])))
    if not np.all(np.isfinite(logits.data)):
        finite = logits.data[np.isfinite(logits.data)]
        peak = float(np.abs(finite).max()) if finite.size else float("inf")
        raise FloatingPointError(f"attention logits exploded (max finite |logit| {peak:.3g})")
    attn = ops.softmax(logits, axis=1)
    v = ops.matmul(Tensor(style_features), wv)
    mean = ops.matmul(attn, v)
    second = ops.matmul(attn, ops.mul(v, v))
    variance = ops.clamp_min(ops.sub(second, ops.mul(mean, mean)), 0.0)
    std = ops.sqrt(ops.add(variance, np.float32(_VAR_GUARD)))
    modulated = ops.add(ops.mul(std, c_std), mean)
    internals = {"attention": attn, "variance": variance, "mean": mean,
                 "std": std, "content_standardized": c_std}
    return modulated, internals


def stylize(content: ContentFeatures, style: StyleFeatures,
            params: dict[str, Tensor], return_internals: bool = False):
    """F_cs = psi(AdaAttN(phi(F_c), F_s)) on the subsampled points."""
    c_mapped = _mlp(content.features, params, "phi")
    modulated, internals = attention_modulate(
        c_mapped, style.features,
        params["stylizer.attn.wq"], params["stylizer.attn.wk"], params["stylizer.attn.wv"])
    out = _mlp(modulated, params, "psi")
    result = StylizedFeatures(content.positions, out, content.lineage)
    if return_internals:
        return result, internals
    return result


def _standardize_np(x: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean(axis=0, keepdims=True, dtype=np.float32)
    var = x.var(axis=0, keepdims=True, dtype=np.float32)
    return ((x - mu) / np.sqrt(var + np.float32(eps))).astype(np.float32)
