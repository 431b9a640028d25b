"""Hierarchical graph-conv encoder over the normalized point cloud.

Three stages of max-relative graph convolution; each stage first
subsamples the cloud by farthest point sampling, then aggregates over
radius-limited ball-query neighborhoods (self-inclusive). Stages with two
layers carry a residual connection (1x1 projection when channel counts
differ). Input point features are RGB concatenated with NDC position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.ops import BatchNormState
from .camera import ScenePointCloud
from .pointcloud import NeighborGraph, ball_query, farthest_point_sample

_NEG_BIG = np.float32(-1e30)


@dataclass
class StageConfig:
    layers: int
    channels: int
    downsample: int
    radius: float
    k: int


@dataclass
class EncoderConfig:
    stages: list[StageConfig] = field(default_factory=lambda: [
        StageConfig(1, 64, 4, 0.06, 16),
        StageConfig(2, 128, 4, 0.12, 16),
        StageConfig(2, 256, 4, 0.24, 16),
    ])
    in_channels: int = 6  # RGB + NDC position

    def __post_init__(self):
        chans = [s.channels for s in self.stages]
        if any(b <= a for a, b in zip(chans, chans[1:])):
            raise ValueError(f"stage channels must be strictly increasing, got {chans}")
        if any(s.downsample < 1 for s in self.stages):
            raise ValueError("downsample factors must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.stages[-1].channels

    def output_points(self, n: int) -> int:
        for s in self.stages:
            n = math.ceil(n / s.downsample)
        return n

    def min_input_points(self) -> int:
        # every stage must keep at least one point
        return int(np.prod([s.downsample for s in self.stages]))


@dataclass
class EncoderGeometry:
    """Per-scene sampling/adjacency, reusable across iterations."""
    stage_samples: list[np.ndarray]   # local FPS indices per stage
    stage_graphs: list[NeighborGraph]
    stage_positions: list[np.ndarray]
    lineage: np.ndarray               # absolute indices of final points into the cloud


@dataclass
class ContentFeatures:
    positions: np.ndarray  # (N', 3) NDC
    features: Tensor       # (N', C_out)
    lineage: np.ndarray    # (N',) indices into the full cloud


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator):
    """He-init MRConv weights + unit batch norms. Returns (params, bn_states)."""
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}
    c_in = cfg.in_channels
    for si, stage in enumerate(cfg.stages):
        stage_in = c_in
        for li in range(stage.layers):
            ci = stage_in if li == 0 else stage.channels
            fan_in = 2 * ci
            w = rng.standard_normal((fan_in, stage.channels)) * np.sqrt(2.0 / fan_in)
            params[f"encoder.s{si}.l{li}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
            params[f"encoder.s{si}.l{li}.gamma"] = Tensor(np.ones(stage.channels, np.float32), requires_grad=True)
            params[f"encoder.s{si}.l{li}.beta"] = Tensor(np.zeros(stage.channels, np.float32), requires_grad=True)
            bn[f"encoder.s{si}.l{li}"] = BatchNormState(stage.channels)
        if stage.layers == 2 and stage_in != stage.channels:
            w = rng.standard_normal((stage_in, stage.channels)) * np.sqrt(1.0 / stage_in)
            params[f"encoder.s{si}.proj.w"] = Tensor(w.astype(np.float32), requires_grad=True)
        c_in = stage.channels
    return params, bn


def mr_conv(features: Tensor, graph: NeighborGraph, weight: Tensor,
            gamma: Tensor, beta: Tensor, bn_state: BatchNormState,
            training: bool) -> Tensor:
    """BN(ReLU(W . concat(x_i, max_j(x_j - x_i)))) over ball neighborhoods.

    An empty neighborhood contributes a zero max-relative vector; the max
    routes gradient to the recorded argmax entries only.
    """
    n, c = features.shape
    if weight.shape[0] != 2 * c:
        raise ValueError(f"weight expects {weight.shape[0]} input channels, features supply {2 * c}")
    idx = graph.indices
    safe_idx = np.where(idx < 0, 0, idx)
    gathered = ops.gather(features, safe_idx)              # (N, K, C)
    center = ops.reshape(features, (n, 1, c))
    rel = ops.sub(gathered, center)
    pad_bias = np.where(idx < 0, _NEG_BIG, np.float32(0.0))[:, :, None]
    max_rel = ops.reduce_max(ops.add(rel, pad_bias), axis=1)
    has_neighbors = (graph.counts > 0).astype(np.float32)[:, None]
    max_rel = ops.mul(max_rel, has_neighbors)
    h = ops.concat([features, max_rel], axis=1)
    y = ops.relu(ops.matmul(h, weight))
    return ops.batch_norm(y, gamma, beta, bn_state, training=training)


def build_encoder_geometry(positions: np.ndarray, cfg: EncoderConfig) -> EncoderGeometry:
    samples, graphs, stage_positions = [], [], []
    pos = np.asarray(positions)
    lineage = np.arange(len(pos), dtype=np.int64)
    for stage in cfg.stages:
        m = math.ceil(len(pos) / stage.downsample)
        sample = farthest_point_sample(pos, m)
        pos = pos[sample.indices]
        lineage = lineage[sample.indices]
        graph = ball_query(pos, pos, stage.radius, stage.k)
        samples.append(sample.indices)
        graphs.append(graph)
        stage_positions.append(pos)
    return EncoderGeometry(samples, graphs, stage_positions, lineage)


def encode(cloud: ScenePointCloud, cfg: EncoderConfig, params: dict[str, Tensor],
           bn_states: dict[str, BatchNormState], training: bool = False,
           geometry: EncoderGeometry | None = None) -> ContentFeatures:
    n = len(cloud)
    if n < cfg.min_input_points():
        raise ValueError(
            f"encoder needs at least {cfg.min_input_points()} points, got {n}")
    if geometry is None:
        geometry = build_encoder_geometry(cloud.positions, cfg)
    feats = Tensor(np.concatenate([cloud.colors, cloud.positions], axis=1))
    for si, stage in enumerate(cfg.stages):
        feats = ops.gather(feats, geometry.stage_samples[si])
        graph = geometry.stage_graphs[si]
        stage_input = feats
        for li in range(stage.layers):
            feats = mr_conv(feats, graph,
                            params[f"encoder.s{si}.l{li}.w"],
                            params[f"encoder.s{si}.l{li}.gamma"],
                            params[f"encoder.s{si}.l{li}.beta"],
                            bn_states[f"encoder.s{si}.l{li}"], training)
        if stage.layers == 2:
            proj = params.get(f"encoder.s{si}.proj.w")
            shortcut = ops.matmul(stage_input, proj) if proj is not None else stage_input
            feats = ops.add(feats, shortcut)
    return ContentFeatures(geometry.stage_positions[-1], feats, geometry.lineage)
