"""Command line entry: make-scene, train, stylize3d, eval-consistency, serve."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .camera import DepthRaster, denormalize
from .config import PipelineConfig, TrajectorySpec
from .formats import write_depth, write_png
from .metrics import consistency_rmse
from .model import StyleModel
from .scenes import SCENE_KINDS, make_scene, make_style_image
from .service import RenderSession
from .training import TrainConfig, scene_bundle, train_config_from_dict, train_stage1, train_stage2

SMOKE_SIZE = 32
SMOKE_ITERATIONS = 40


def _cmd_make_scene(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(args.kind, args.seed, args.size)
    rgb, depth = scene.render(scene.canonical)
    if not np.all(np.isfinite(depth)):
        raise SystemExit(f"scene '{args.kind}' seed {args.seed} left uncovered pixels")
    write_png(out / "image.png", rgb)
    write_depth(out / "depth.dpth", DepthRaster(depth))
    scene.canonical.save(out / "camera.json")
    with open(out / "scene.json", "w") as f:
        json.dump({"kind": args.kind, "seed": args.seed, "size": args.size}, f, indent=2)
    print(f"scene written to {out} ({args.kind}, seed {args.seed}, {args.size}px)")
    return 0


def smoke_train_config(seed: int) -> TrainConfig:
    return TrainConfig(iterations_stage1=SMOKE_ITERATIONS,
                       iterations_stage2=SMOKE_ITERATIONS,
                       seed=seed, n_styles=4, style_size=SMOKE_SIZE)


def run_training(out_dir: Path, train_cfg: TrainConfig, scene_specs: list[tuple[str, int]],
                 size: int, render_frames: int = 4):
    """Both stages end-to-end, then a short orbit of stylized frames."""
    out_dir.mkdir(parents=True, exist_ok=True)
    model = StyleModel.initialize(train_cfg.seed)
    scenes = [make_scene(kind, seed, size) for kind, seed in scene_specs]
    bundles = [scene_bundle(model, s) for s in scenes]
    ckpt1, _, t1 = train_stage1(model, scenes, train_cfg, out_dir, bundles)
    ckpt2, _, t2 = train_stage2(model, scenes, train_cfg, out_dir, bundles,
                                stage1_checkpoint=ckpt1)
    frames_dir = out_dir / "frames"
    if render_frames > 0:
        frames_dir.mkdir(exist_ok=True)
        scene = scenes[0]
        rgb, depth = scene.render(scene.canonical)
        write_png(out_dir / "content.png", rgb)
        write_depth(out_dir / "depth.dpth", DepthRaster(depth))
        scene.canonical.save(out_dir / "camera.json")
        style = make_style_image(train_cfg.seed, size)
        write_png(out_dir / "style.png", style)
        cfg = PipelineConfig(content_image=out_dir / "content.png",
                             depth_file=out_dir / "depth.dpth",
                             style_image=out_dir / "style.png",
                             checkpoint=ckpt2,
                             camera_file=out_dir / "camera.json",
                             out_dir=frames_dir)
        cfg.trajectory = TrajectorySpec(mode="orbit", frames=render_frames,
                                        max_rotation_deg=4.0, max_translation=0.06)
        render_trajectory(cfg)
    return ckpt1, ckpt2, t1 + t2


def _cmd_train(args) -> int:
    out = Path(args.out)
    if args.smoke:
        seed = 0 if args.seed is None else args.seed
        cfg = smoke_train_config(seed)
        specs = [("boxes", seed)]
        size = SMOKE_SIZE
    else:
        if not args.config:
            raise SystemExit("train requires --config (or --smoke)")
        pc = PipelineConfig.from_file(args.config)
        cfg = train_config_from_dict(pc.train)
        if args.seed is not None:
            cfg.seed = args.seed
        kinds = pc.scene.get("kinds", ["boxes"])
        seeds = pc.scene.get("seeds", [cfg.seed])
        size = int(pc.scene.get("size", 64))
        specs = [(k, int(s)) for k, s in zip(kinds, seeds)]
    t0 = time.time()
    ckpt1, ckpt2, train_secs = run_training(out, cfg, specs, size)
    print(f"stage 1 checkpoint: {ckpt1}")
    print(f"stage 2 checkpoint: {ckpt2}")
    print(f"training {train_secs:.1f}s, total {time.time() - t0:.1f}s")
    return 0


def render_trajectory(cfg: PipelineConfig):
    """Shared by stylize3d and eval-consistency: session + orbit frames."""
    session = RenderSession.from_config(cfg)
    world = denormalize(session.bundle.cloud.positions, session.bundle.cloud.record)
    pivot = float(np.median(session.canonical.world_to_camera(world)[:, 2]))
    cams = cfg.trajectory.generate(session.canonical, pivot)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views, manifest = [], []
    for i, cam in enumerate(cams):
        t0 = time.perf_counter()
        view = session.render_view(cam)
        millis = (time.perf_counter() - t0) * 1000.0
        name = f"frame_{i:04d}.png"
        write_png(out / name, view.image.numpy())
        views.append(view)
        manifest.append({"index": i, "file": name,
                         "pose": cam.pose_matrix.reshape(-1).tolist(),
                         "millis": round(millis, 2)})
    with open(out / "manifest.json", "w") as f:
        json.dump({"frames": manifest, "style_id": session.style_id}, f, indent=2)
    return session, views


def _cmd_stylize3d(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    _, views = render_trajectory(cfg)
    print(f"{len(views)} frames written to {cfg.out_dir}")
    return 0


def _cmd_eval_consistency(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.out:
        cfg.out_dir = Path(args.out)
    session, views = render_trajectory(cfg)
    report = consistency_rmse(views, session.model.pyramid)
    report.save_json(Path(cfg.out_dir) / "consistency.json")
    report.save_csv(Path(cfg.out_dir) / "consistency.csv")
    d = report.to_dict()
    print(f"mean RMSE short={d['mean_rmse_short']:.4f} long={d['mean_rmse_long']:.4f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = PipelineConfig.from_file(args.config)
    session = RenderSession.from_config(cfg)
    app = create_app(session)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stylepoint",
                                description="3D photo stylization pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("make-scene", help="emit a synthetic scene (image/depth/camera)")
    ps.add_argument("--kind", choices=SCENE_KINDS, default="boxes")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--size", type=int, default=64)
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=_cmd_make_scene)

    pt = sub.add_parser("train", help="run the two-stage training schedule")
    pt.add_argument("--config")
    pt.add_argument("--seed", type=int, default=None,
                    help="overrides the config seed (default 0 for --smoke)")
    pt.add_argument("--out", required=True)
    pt.add_argument("--smoke", action="store_true",
                    help="tiny fixed schedule on the smoke scene")
    pt.set_defaults(fn=_cmd_train)

    pz = sub.add_parser("stylize3d", help="render a stylized trajectory")
    pz.add_argument("--config", required=True)
    pz.add_argument("--out")
    pz.set_defaults(fn=_cmd_stylize3d)

    pe = sub.add_parser("eval-consistency", help="warp-based consistency report")
    pe.add_argument("--config", required=True)
    pe.add_argument("--out")
    pe.set_defaults(fn=_cmd_eval_consistency)

    pv = sub.add_parser("serve", help="local render service")
    pv.add_argument("--config", required=True)
    pv.add_argument("--port", type=int, default=8475)
    pv.add_argument("--host", default="127.0.0.1")
    pv.set_defaults(fn=_cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
