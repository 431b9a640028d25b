"""Render session and local HTTP render service.

The session does the expensive per-scene work once (back-projection,
encoding, stylization, IDW upsampling); each frame afterwards is just
rasterize + decode, shared verbatim by the CLI frame writer and the HTTP
endpoints, so identical (pose, style, checkpoint) yields identical bytes.
"""

# no `from __future__ import annotations` here: FastAPI must resolve the
# endpoint annotations (Request, UploadFile) at runtime

import hashlib
import io
import threading
import time

import numpy as np

from .autodiff import Tensor
from .camera import CameraSpec, DepthRaster, cloud_from_view, merge_views
from .config import PipelineConfig
from .formats import DEPTH_MAGIC, LDI_MAGIC, png_bytes, read_depth, read_ldi, read_png
from .model import StyleModel
from .pyramid import extract_style_features
from .renderer import RenderedView, rasterize
from .training import pose_offset
from .unet import decode


class RenderSession:
    """Loaded scene + model with a per-style feature cache."""

    def __init__(self, model: StyleModel, cloud, canonical: CameraSpec,
                 bounds_translation: float = 0.15, bounds_rotation_deg: float = 10.0):
        self.model = model
        self.bundle = model.prepare_scene(cloud)
        self.canonical = canonical
        self.bounds_translation = bounds_translation
        self.bounds_rotation_deg = bounds_rotation_deg
        self.content = model.encode_scene(self.bundle, training=False)
        self.style_id: str | None = None
        self._style_lock = threading.Lock()
        # default: render plain content features until a style is set
        self._point_features = model.upsample_features(
            self.bundle, self.content.features).numpy()

    @staticmethod
    def from_config(cfg: PipelineConfig) -> "RenderSession":
        if cfg.checkpoint is None:
            raise ValueError("config is missing paths.checkpoint")
        if cfg.content_image is None or cfg.depth_file is None:
            raise ValueError("config is missing paths.content_image or paths.depth")
        model, _ = StyleModel.load(cfg.checkpoint)
        image = read_png(cfg.content_image)
        with open(cfg.depth_file, "rb") as f:
            magic = f.read(4)
        if magic == DEPTH_MAGIC:
            depth = read_depth(cfg.depth_file)
        elif magic == LDI_MAGIC:
            depth = read_ldi(cfg.depth_file)
        else:
            raise ValueError(f"{cfg.depth_file}: unrecognized depth magic {magic!r}")
        if cfg.camera_file is not None:
            cam = CameraSpec.load(cfg.camera_file)
        else:
            h, w = image.shape[:2]
            cam = CameraSpec(fx=float(max(w, h)), fy=float(max(w, h)),
                             cx=w / 2.0, cy=h / 2.0, width=w, height=h)
        for key, val in cfg.camera_overrides.items():
            setattr(cam, key, val)
        if isinstance(depth, DepthRaster):
            cloud = cloud_from_view(image, depth, cam)
        else:
            cloud = merge_views([(image, depth, cam)], 0)
        session = RenderSession(model, cloud, cam,
                                cfg.bounds_translation, cfg.bounds_rotation_deg)
        if cfg.style_image is not None:
            with open(cfg.style_image, "rb") as f:
                session.set_style(f.read())
        return session

    # -- style management ----------------------------------------------------

    def set_style(self, image_bytes: bytes) -> tuple[str, bool]:
        """Restylize the cached point features; returns (style id, cache hit)."""
        style_id = hashlib.sha1(image_bytes).hexdigest()[:16]
        with self._style_lock:
            if style_id == self.style_id:
                return style_id, True
            from PIL import Image

            img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
            style = np.asarray(img, dtype=np.float32) / 255.0
            feats = extract_style_features(style, self.model.pyramid)
            stylized = self.model.stylize_features(self.content, feats)
            self._point_features = self.model.upsample_features(
                self.bundle, stylized.features).numpy()
            self.style_id = style_id
            return style_id, False

    # -- rendering -----------------------------------------------------------

    def camera_for(self, pose: np.ndarray, width: int | None = None,
                   height: int | None = None) -> CameraSpec:
        c = self.canonical
        w = width or c.width
        h = height or c.height
        return CameraSpec(c.fx * w / c.width, c.fy * h / c.height,
                          c.cx * w / c.width, c.cy * h / c.height,
                          w, h, pose[:, :3], pose[:, 3])

    def check_bounds(self, cam: CameraSpec) -> tuple[bool, dict]:
        dt, angle = pose_offset(self.canonical, cam)
        bounds = {"translation": self.bounds_translation,
                  "rotation_deg": self.bounds_rotation_deg}
        ok = (np.abs(dt).max() <= self.bounds_translation + 1e-6
              and angle <= self.bounds_rotation_deg + 1e-4)
        return ok, bounds

    def render_view(self, cam: CameraSpec) -> RenderedView:
        view = rasterize(self.bundle.cloud, Tensor(self._point_features), cam)
        view.image = decode(view.feature_map, self.model.params)
        return view

    def render_image(self, cam: CameraSpec) -> np.ndarray:
        return self.render_view(cam).image.numpy()

    def session_info(self) -> dict:
        c = self.canonical
        return {
            "resolution": [c.width, c.height],
            "camera": {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy},
            "canonical_pose": c.pose_matrix.reshape(-1).tolist(),
            "bounds": {"translation": self.bounds_translation,
                       "rotation_deg": self.bounds_rotation_deg},
            "points": len(self.bundle.cloud),
            "style_id": self.style_id,
        }


def parse_pose(obj) -> np.ndarray:
    """Validate a 3x4 row-major pose from JSON (12 floats, flat or nested)."""
    arr = np.asarray(obj, dtype=np.float64)
    if arr.size != 12:
        raise ValueError(f"pose must contain 12 floats (3x4 row-major), got {arr.size}")
    arr = arr.reshape(3, 4)
    if not np.all(np.isfinite(arr)):
        raise ValueError("pose contains non-finite values")
    err = np.abs(arr[:, :3] @ arr[:, :3].T - np.eye(3)).max()
    if err > 1e-3:
        raise ValueError(f"pose rotation is not orthonormal (deviation {err:.2e})")
    return arr


def create_app(session: RenderSession):
    from fastapi import FastAPI, Request, UploadFile
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="stylepoint render service")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/session")
    def session_meta():
        return session.session_info()

    @app.post("/render")
    async def render(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        try:
            pose = parse_pose(body.get("pose"))
            width = int(body.get("width") or session.canonical.width)
            height = int(body.get("height") or session.canonical.height)
            if width % 4 or height % 4 or width < 8 or height < 8:
                raise ValueError(f"width/height must be multiples of 4 and >= 8, "
                                 f"got {width}x{height}")
        except (ValueError, TypeError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        cam = session.camera_for(pose, width, height)
        ok, bounds = session.check_bounds(cam)
        if not ok:
            return JSONResponse({"error": "pose outside session bounds",
                                 "bounds": bounds}, status_code=422)
        t0 = time.perf_counter()
        image = session.render_image(cam)
        millis = (time.perf_counter() - t0) * 1000.0
        return Response(content=png_bytes(image), media_type="image/png",
                        headers={"X-Render-Millis": f"{millis:.2f}"})

    @app.post("/style")
    async def style(file: UploadFile):
        data = await file.read()
        try:
            style_id, cache_hit = session.set_style(data)
        except Exception as e:
            return JSONResponse({"error": f"style rejected: {e}"}, status_code=400)
        return {"style_id": style_id, "cache_hit": cache_hit}

    return app
