"""Two-stage training: view synthesis first, then stylization.

Stage 1 trains encoder + renderer to reconstruct randomly sampled views
of each scene. Stage 2 freezes the encoder (its content features become
constants), trains the stylizer and fine-tunes the renderer under the
style losses. Each iteration draws one scene and a fresh pair of views;
the per-iteration RNG is seeded from (run seed, stage, iteration), so a
run is a pure function of (seed, config, scenes) and can resume from a
checkpoint bit-identically.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tape, Tensor, adam_step
from .camera import CameraSpec, DepthRaster, cloud_from_view
from .losses import stylization_loss, view_synthesis_loss
from .model import SceneBundle, StyleModel
from .pyramid import extract_style_features
from .scenes import SyntheticScene, make_style_image


@dataclass
class TrainConfig:
    iterations_stage1: int = 2000
    iterations_stage2: int = 2000
    views_per_batch: int = 2
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    translation_range: float = 0.15
    rotation_range_deg: float = 10.0
    n_styles: int = 8
    style_size: int = 64
    loss_weights: dict = field(default_factory=dict)
    consistency: bool = True
    log_every: int = 1

    def __post_init__(self):
        if self.iterations_stage1 < 0 or self.iterations_stage2 < 0 or self.views_per_batch < 1:
            raise ValueError("iteration counts and batch size must be positive")


def _euler_rotation(angles_rad: np.ndarray) -> np.ndarray:
    ax, ay, az = angles_rad
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_view(canonical: CameraSpec, rng: np.random.Generator,
                translation: float = 0.15, rotation_deg: float = 10.0) -> CameraSpec:
    """Uniform pose in the canonical camera's neighborhood.

    The perturbation acts in the canonical camera frame: x' = dR x_cam + dt,
    with dt uniform in [-translation, translation]^3 and per-axis Euler
    angles uniform in [-rotation_deg, rotation_deg]."""
    angles = np.deg2rad(rng.uniform(-rotation_deg, rotation_deg, 3))
    dt = rng.uniform(-translation, translation, 3)
    dr = _euler_rotation(angles)
    return canonical.with_pose(dr @ canonical.rotation,
                               dr @ canonical.translation + dt)


def pose_offset(canonical: CameraSpec, cam: CameraSpec) -> tuple[np.ndarray, float]:
    """(translation delta (3,), rotation angle in degrees) vs the canonical pose."""
    dr = cam.rotation @ canonical.rotation.T
    dt = cam.translation - dr @ canonical.translation
    cos = np.clip((np.trace(dr) - 1.0) / 2.0, -1.0, 1.0)
    return dt, float(np.degrees(np.arccos(cos)))


def iteration_rng(seed: int, stage: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, iteration])


def scene_bundle(model: StyleModel, scene: SyntheticScene) -> SceneBundle:
    rgb, depth = scene.render(scene.canonical)
    if not np.all(np.isfinite(depth)):
        raise ValueError(f"scene '{scene.kind}' canonical view has uncovered pixels")
    cloud = cloud_from_view(rgb, DepthRaster(depth), scene.canonical)
    return model.prepare_scene(cloud)


class LossLog:
    """CSV loss log: iteration, then one column per loss term."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = path
        self.columns = columns
        self.rows: list[list] = []
        self._f = open(path, "w", newline="")
        self._writer = csv.writer(self._f)
        self._writer.writerow(["iteration", "loss"] + columns)

    def append(self, iteration: int, loss: float, parts: dict):
        row = [iteration, f"{loss:.6f}"] + [f"{parts[c]:.6f}" for c in self.columns]
        self._writer.writerow(row)
        self.rows.append([iteration, loss] + [parts[c] for c in self.columns])

    def close(self):
        self._f.close()


def _grads_by_name(model: StyleModel, grad_map, allowed: set[str]) -> dict[str, np.ndarray]:
    names = model.name_of()
    out = {}
    for tensor, grad in grad_map.items():
        name = names.get(id(tensor))
        if name is not None and name in allowed:
            out[name] = grad
    return out


def _save_checkpoint(model: StyleModel, state: AdamState, path: Path,
                     stage: int, iteration: int) -> None:
    extra = {f"optim.m.{n}": m for n, m in state.m.items()}
    extra.update({f"optim.v.{n}": v for n, v in state.v.items()})
    model.save(path, extra=extra)
    meta = {"stage": stage, "iteration": iteration, "adam_step": state.step}
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2)


def load_optimizer_state(extra: dict[str, np.ndarray], meta_path: Path) -> AdamState:
    state = AdamState()
    for name, arr in extra.items():
        if name.startswith("optim.m."):
            state.m[name[len("optim.m."):]] = arr.copy()
        elif name.startswith("optim.v."):
            state.v[name[len("optim.v."):]] = arr.copy()
    if meta_path.exists():
        with open(meta_path) as f:
            state.step = json.load(f)["adam_step"]
    return state


def train_stage1(model: StyleModel, scenes: list[SyntheticScene], cfg: TrainConfig,
                 out_dir: Path, bundles: list[SceneBundle] | None = None,
                 state: AdamState | None = None, start_iteration: int = 0):
    """View-synthesis stage; returns (checkpoint path, loss log rows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundles = bundles or [scene_bundle(model, s) for s in scenes]
    state = state or AdamState()
    trainable = set(model.params)  # every parameter trains in stage 1
    log = LossLog(out_dir / "stage1_loss.csv", ["l_rgb", "l_feat", "l_cns"])
    t0 = time.time()
    try:
        for it in range(start_iteration, cfg.iterations_stage1):
            rng = iteration_rng(cfg.seed, 1, it)
            idx = it % len(scenes)
            scene, bundle = scenes[idx], bundles[idx]
            cams = [sample_view(scene.canonical, rng, cfg.translation_range,
                                cfg.rotation_range_deg)
                    for _ in range(cfg.views_per_batch)]
            gt = [scene.render(c)[0] for c in cams]
            with Tape() as tape:
                content = model.encode_scene(bundle, training=True)
                views = model.render_views(bundle, content.features, cams)
                loss, parts = view_synthesis_loss(views, gt, model.pyramid,
                                                  cfg.loss_weights)
                if not math.isfinite(loss.item()):
                    raise FloatingPointError(
                        f"stage 1 iteration {it}: non-finite loss {loss.item()} (parts {parts})")
                grads = tape.backward(loss)
            adam_step(model.params, _grads_by_name(model, grads, trainable), state,
                      lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
            if it % cfg.log_every == 0:
                log.append(it, loss.item(), parts)
    finally:
        log.close()
    ckpt = out_dir / "stage1.spck"
    _save_checkpoint(model, state, ckpt, 1, cfg.iterations_stage1)
    elapsed = time.time() - t0
    return ckpt, log.rows, elapsed


def train_stage2(model: StyleModel, scenes: list[SyntheticScene], cfg: TrainConfig,
                 out_dir: Path, bundles: list[SceneBundle] | None = None,
                 stage1_checkpoint: Path | None = None):
    """Stylization stage: encoder frozen, stylizer + renderer train.

    Requires a stage-1 checkpoint (implicit when the model instance just
    finished stage 1 in-process and `stage1_checkpoint` points at it)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if stage1_checkpoint is not None and not Path(stage1_checkpoint).exists():
        raise FileNotFoundError(f"stage-1 checkpoint not found: {stage1_checkpoint}")
    bundles = bundles or [scene_bundle(model, s) for s in scenes]
    state = AdamState()
    trainable = set(model.stage2_param_names())
    styles = [make_style_image(cfg.seed * 1000 + i, cfg.style_size)
              for i in range(cfg.n_styles)]
    style_feats = [extract_style_features(s, model.pyramid) for s in styles]

    # encoder is frozen: content features become per-scene constants
    contents = []
    for bundle in bundles:
        c = model.encode_scene(bundle, training=False)
        contents.append(c)

    log = LossLog(out_dir / "stage2_loss.csv", ["l_global", "l_local", "l_cns"])
    t0 = time.time()
    try:
        for it in range(cfg.iterations_stage2):
            rng = iteration_rng(cfg.seed, 2, it)
            idx = it % len(scenes)
            scene, bundle, content = scenes[idx], bundles[idx], contents[idx]
            cams = [sample_view(scene.canonical, rng, cfg.translation_range,
                                cfg.rotation_range_deg)
                    for _ in range(cfg.views_per_batch)]
            plain = [scene.render(c)[0] for c in cams]
            s_idx = int(rng.integers(len(styles)))
            with Tape() as tape:
                stylized = model.stylize_features(content, style_feats[s_idx])
                views = model.render_views(bundle, stylized.features, cams)
                loss, parts = stylization_loss(
                    views, styles[s_idx], plain, model.pyramid, model.loss_attn,
                    include_consistency=cfg.consistency, weights=cfg.loss_weights)
                if not math.isfinite(loss.item()):
                    raise FloatingPointError(
                        f"stage 2 iteration {it}: non-finite loss {loss.item()} (parts {parts})")
                grads = tape.backward(loss)
            adam_step(model.params, _grads_by_name(model, grads, trainable), state,
                      lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
            if it % cfg.log_every == 0:
                log.append(it, loss.item(), parts)
    finally:
        log.close()
    ckpt = out_dir / "stage2.spck"
    _save_checkpoint(model, state, ckpt, 2, cfg.iterations_stage2)
    elapsed = time.time() - t0
    return ckpt, log.rows, elapsed


def train_config_from_dict(d: dict) -> TrainConfig:
    fields = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - fields
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**d)
