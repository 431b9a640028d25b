"""Three-level U-Net decoding rasterized feature maps into RGB.

The encoder side is two stride-2 3x3 convs that keep the channel width
(levels H, H/2, H/4); the decoder upsamples with stride-2 transposed
convs that halve the channels (256 -> 128 -> 64), adding 1x1-projected
skip features at each level, then a final 3x3 conv + sigmoid. Leaky ReLU
(slope 0.2) on the way down, ReLU on the way up.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops

LEAKY_SLOPE = 0.2


def _conv_init(rng, kh, kw, ci, co, gain=2.0):
    fan_in = kh * kw * ci
    w = rng.standard_normal((kh, kw, ci, co)) * np.sqrt(gain / fan_in)
    return Tensor(w.astype(np.float32), requires_grad=True)


def init_unet_params(rng: np.random.Generator, channels: int = 256):
    c = channels
    params: dict[str, Tensor] = {
        "unet.down1.w": _conv_init(rng, 3, 3, c, c),
        "unet.down2.w": _conv_init(rng, 3, 3, c, c),
        "unet.up1.w": _conv_init(rng, 3, 3, c, c // 2),
        "unet.skip1.w": _conv_init(rng, 1, 1, c, c // 2),
        "unet.up2.w": _conv_init(rng, 3, 3, c // 2, c // 4),
        "unet.skip2.w": _conv_init(rng, 1, 1, c, c // 4),
        "unet.out.w": _conv_init(rng, 3, 3, c // 4, 3, gain=1.0),
    }
    for name, co in (("down1", c), ("down2", c), ("up1", c // 2), ("skip1", c // 2),
                     ("up2", c // 4), ("skip2", c // 4), ("out", 3)):
        params[f"unet.{name}.b"] = Tensor(np.zeros(co, np.float32), requires_grad=True)
    return params


def _conv(x, params, name, stride=1):
    return ops.add(ops.conv2d(x, params[f"unet.{name}.w"], stride=stride),
                   params[f"unet.{name}.b"])


def decode(feature_map, params: dict[str, Tensor]) -> Tensor:
    """(B, H, W, 256) feature maps -> (B, H, W, 3) images in [0, 1]."""
    x = feature_map if isinstance(feature_map, Tensor) else Tensor(feature_map)
    squeeze = False
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
        squeeze = True
    b, h, w, c = x.shape
    if h % 4 or w % 4:
        raise ValueError(f"decode requires spatial dims divisible by 4, got {h}x{w}")
    e0 = x
    e1 = ops.leaky_relu(_conv(e0, params, "down1", stride=2), LEAKY_SLOPE)
    e2 = ops.leaky_relu(_conv(e1, params, "down2", stride=2), LEAKY_SLOPE)
    u1 = ops.relu(ops.add(ops.conv2d_transpose(e2, params["unet.up1.w"], stride=2),
                          params["unet.up1.b"]))
    d1 = ops.add(u1, _conv(e1, params, "skip1"))
    u2 = ops.relu(ops.add(ops.conv2d_transpose(d1, params["unet.up2.w"], stride=2),
                          params["unet.up2.b"]))
    d0 = ops.add(u2, _conv(e0, params, "skip2"))
    img = ops.sigmoid(_conv(d0, params, "out"))
    if squeeze:
        img = ops.reshape(img, img.shape[1:])
    return img
