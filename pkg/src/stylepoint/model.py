"""The full stylization model: parameters, checkpointing, render paths.

A checkpoint is a flat float32 archive (see autodiff.checkpoint) holding
learnable parameters, batch-norm running statistics, the frozen pyramid
and loss-attention weights, and the encoder configuration, so a saved
model is fully self-contained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, load_arrays, ops, save_arrays
from .autodiff.ops import BatchNormState
from .camera import CameraSpec, ScenePointCloud
from .encoder import (ContentFeatures, EncoderConfig, EncoderGeometry, StageConfig,
                      build_encoder_geometry, encode, init_encoder_params)
from .pointcloud import idw_weights
from .pyramid import PYRAMID_SEED, STYLE_CHANNELS, StyleFeatures, build_pyramid_weights, orthogonal_init
from .renderer import RenderedView, rasterize
from .stylizer import StylizedFeatures, init_stylizer_params, stylize
from .unet import decode, init_unet_params

LOSS_ATTN_SEED = 417893
IDW_K = 3


def build_loss_attention_weights(seed: int = LOSS_ATTN_SEED) -> dict[str, np.ndarray]:
    """Fixed, never-trained attention weights for the local style loss target."""
    rng = np.random.default_rng(seed)
    c = STYLE_CHANNELS
    return {
        "loss_attn.wq": orthogonal_init(rng, c, c),
        "loss_attn.wk": orthogonal_init(rng, c, c),
        "loss_attn.wv": orthogonal_init(rng, c, c),
    }


@dataclass
class SceneBundle:
    """Per-scene cached geometry: encoder sampling/adjacency + IDW upsampling."""
    cloud: ScenePointCloud
    geometry: EncoderGeometry
    idw_idx: np.ndarray
    idw_w: np.ndarray


class StyleModel:
    def __init__(self, params: dict[str, Tensor], bn_states: dict[str, BatchNormState],
                 encoder_cfg: EncoderConfig,
                 pyramid_weights: dict[str, np.ndarray] | None = None,
                 loss_attn: dict[str, np.ndarray] | None = None):
        self.params = params
        self.bn_states = bn_states
        self.encoder_cfg = encoder_cfg
        self.pyramid = pyramid_weights or build_pyramid_weights()
        self.loss_attn = loss_attn or build_loss_attention_weights()

    @classmethod
    def initialize(cls, seed: int, encoder_cfg: EncoderConfig | None = None) -> "StyleModel":
        cfg = encoder_cfg or EncoderConfig()
        rng = np.random.default_rng(seed)
        params, bn = init_encoder_params(cfg, rng)
        params.update(init_stylizer_params(rng, cfg.out_channels))
        params.update(init_unet_params(rng, cfg.out_channels))
        return cls(params, bn, cfg)

    # -- parameter grouping ------------------------------------------------

    def encoder_param_names(self) -> list[str]:
        return sorted(n for n in self.params if n.startswith("encoder."))

    def stage2_param_names(self) -> list[str]:
        return sorted(n for n in self.params
                      if n.startswith("stylizer.") or n.startswith("unet."))

    def name_of(self) -> dict[int, str]:
        return {id(t): n for n, t in self.params.items()}

    # -- checkpointing -----------------------------------------------------

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays: dict[str, np.ndarray] = {n: t.data for n, t in self.params.items()}
        for name, st in self.bn_states.items():
            arrays[f"bn.{name}.mean"] = st.running_mean
            arrays[f"bn.{name}.var"] = st.running_var
        for name, w in self.pyramid.items():
            arrays[f"frozen.{name}"] = w
        for name, w in self.loss_attn.items():
            arrays[f"frozen.{name}"] = w
        arrays["config.encoder.stages"] = np.array(
            [[s.layers, s.channels, s.downsample, s.radius, s.k]
             for s in self.encoder_cfg.stages], dtype=np.float32)
        if extra:
            arrays.update(extra)
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> tuple["StyleModel", dict[str, np.ndarray]]:
        """Returns (model, leftover arrays) — leftovers hold optimizer state etc."""
        arrays = load_arrays(path)
        stages = [StageConfig(int(r[0]), int(r[1]), int(r[2]), float(r[3]), int(r[4]))
                  for r in arrays.pop("config.encoder.stages")]
        cfg = EncoderConfig(stages=stages)
        params: dict[str, Tensor] = {}
        bn: dict[str, BatchNormState] = {}
        pyramid: dict[str, np.ndarray] = {}
        loss_attn: dict[str, np.ndarray] = {}
        extra: dict[str, np.ndarray] = {}
        bn_parts: dict[str, dict[str, np.ndarray]] = {}
        for name, arr in arrays.items():
            if name.startswith("bn."):
                layer, kind = name[3:].rsplit(".", 1)
                bn_parts.setdefault(layer, {})[kind] = arr
            elif name.startswith("frozen.pyramid."):
                pyramid[name[len("frozen."):]] = arr
            elif name.startswith("frozen.loss_attn."):
                loss_attn[name[len("frozen."):]] = arr
            elif name.startswith(("encoder.", "stylizer.", "unet.")):
                params[name] = Tensor(arr.copy(), requires_grad=True)
            else:
                extra[name] = arr
        for layer, parts in bn_parts.items():
            st = BatchNormState(len(parts["mean"]))
            st.running_mean = parts["mean"].copy()
            st.running_var = parts["var"].copy()
            bn[layer] = st
        return cls(params, bn, cfg, pyramid, loss_attn), extra

    # -- forward paths -----------------------------------------------------

    def prepare_scene(self, cloud: ScenePointCloud) -> SceneBundle:
        geometry = build_encoder_geometry(cloud.positions, self.encoder_cfg)
        idx, w = idw_weights(cloud.positions, geometry.stage_positions[-1], k=IDW_K)
        return SceneBundle(cloud, geometry, idx, w)

    def encode_scene(self, bundle: SceneBundle, training: bool = False) -> ContentFeatures:
        return encode(bundle.cloud, self.encoder_cfg, self.params, self.bn_states,
                      training=training, geometry=bundle.geometry)

    def stylize_features(self, content: ContentFeatures,
                         style: StyleFeatures) -> StylizedFeatures:
        return stylize(content, style, self.params)

    def upsample_features(self, bundle: SceneBundle, features: Tensor) -> Tensor:
        """IDW upsampling from the subsampled points back to the full cloud."""
        return ops.weighted_gather(features, bundle.idw_idx, bundle.idw_w)

    def render_views(self, bundle: SceneBundle, point_features: Tensor,
                     cams: list[CameraSpec]) -> list[RenderedView]:
        """Rasterize the (subsampled) point features into each view and decode.

        The feature maps of all views run through the U-Net as one batch.
        """
        full = self.upsample_features(bundle, point_features)
        views = [rasterize(bundle.cloud, full, cam) for cam in cams]
        batch = ops.concat([ops.reshape(v.feature_map, (1,) + v.feature_map.shape)
                            for v in views], axis=0)
        images = decode(batch, self.params)
        for i, v in enumerate(views):
            v.image = ops.reshape(ops.gather(images, np.array([i])), images.shape[1:])
        return views

    def render_single(self, bundle: SceneBundle, point_features: Tensor,
                      cam: CameraSpec) -> RenderedView:
        return self.render_views(bundle, point_features, [cam])[0]
