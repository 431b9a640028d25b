"""Frozen random convolutional feature pyramid.

Stands in for a pretrained backbone: a 3-stage conv stack (32/64/128
channels, 3x3 kernels, stride 2 between stages, ReLU) with fixed-seed
orthogonal weights. It is never trained, so features of a fixed image
are bit-stable across runs. Used for style features (deepest level),
the perceptual term of the view-synthesis loss, and the style-statistics
losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops

PYRAMID_SEED = 902157
STYLE_CHANNELS = 128
_STAGES = ((3, 32, 1), (32, 64, 2), (64, 128, 2))  # (c_in, c_out, stride)


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int,
                    gain: float = 1.0) -> np.ndarray:
    """Sign-fixed orthogonal matrix (rows, cols), deterministic per rng stream."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))  # fix QR sign ambiguity
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(np.float32)


def build_pyramid_weights(seed: int = PYRAMID_SEED) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    weights = {}
    for i, (ci, co, _) in enumerate(_STAGES):
        w = orthogonal_init(rng, 9 * ci, co, gain=np.sqrt(2.0))
        weights[f"pyramid.conv{i}.w"] = w.reshape(3, 3, ci, co)
    return weights


def pyramid_features(images, weights: dict[str, np.ndarray]) -> list[Tensor]:
    """3-level feature maps of a batch of images (B,H,W,3) in [0,1].

    Accepts a Tensor (gradients flow back to the pixels) or a plain array.
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    levels = []
    for i, (_, _, stride) in enumerate(_STAGES):
        x = ops.relu(ops.conv2d(x, Tensor(weights[f"pyramid.conv{i}.w"]), stride=stride))
        levels.append(x)
    return levels


@dataclass
class StyleFeatures:
    features: np.ndarray  # (S, STYLE_CHANNELS) deepest-level grid, flattened row-major
    origins: np.ndarray   # (S, 2) (x, y) center of each grid cell in source pixels
    source_shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.features)


def extract_style_features(style_image: np.ndarray,
                           weights: dict[str, np.ndarray]) -> StyleFeatures:
    """Deepest pyramid level of a style image as a grid of feature vectors."""
    img = np.asarray(style_image, dtype=np.float32)
    h, w = img.shape[:2]
    if h < 32 or w < 32:
        raise ValueError(f"style image must be at least 32x32, got {h}x{w}")
    deepest = pyramid_features(img[None], weights)[-1].numpy()[0]  # (h', w', C)
    hs, ws, c = deepest.shape
    scale = h / hs  # total downsampling factor
    ys, xs = np.meshgrid(np.arange(hs), np.arange(ws), indexing="ij")
    origins = np.stack([(xs.reshape(-1) + 0.5) * scale,
                        (ys.reshape(-1) + 0.5) * scale], axis=1).astype(np.float32)
    return StyleFeatures(deepest.reshape(-1, c), origins, (h, w))
