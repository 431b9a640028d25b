"""Pipeline configuration: a TOML-style key/value file.

Python 3.10 lacks tomllib and the mirror here has no TOML package, so a
small subset parser lives here: ``[section.sub]`` headers, ``key = value``
lines with strings, numbers, booleans and (nested) arrays, and ``#``
comments. Multi-line arrays are supported by bracket balancing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraSpec


def _parse_scalar(tok: str):
    tok = tok.strip()
    if tok.startswith('"') and tok.endswith('"') and len(tok) >= 2:
        return tok[1:-1]
    if tok == "true":
        return True
    if tok == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        raise ValueError(f"cannot parse value: {tok!r}")


def _split_items(body: str) -> list[str]:
    items, depth, cur, in_str = [], 0, [], False
    for ch in body:
        if ch == '"':
            in_str = not in_str
            cur.append(ch)
        elif in_str:
            cur.append(ch)
        elif ch == "[":
            depth += 1
            cur.append(ch)
        elif ch == "]":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            items.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        items.append(tail)
    return items


def _parse_value(tok: str):
    tok = tok.strip()
    if tok.startswith("["):
        if not tok.endswith("]"):
            raise ValueError(f"unbalanced array: {tok!r}")
        return [_parse_value(item) for item in _split_items(tok[1:-1])]
    return _parse_scalar(tok)


def _strip_comment(line: str) -> str:
    out, in_str = [], False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_toml_subset(text: str) -> dict:
    root: dict = {}
    section = root
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = root
            for part in line[1:-1].strip().split("."):
                section = section.setdefault(part, {})
            continue
        if "=" not in line:
            raise ValueError(f"line {i}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        value = value.strip()
        # multi-line array: keep consuming until brackets balance
        while value.count("[") > value.count("]"):
            if i >= len(lines):
                raise ValueError(f"unterminated array for key {key.strip()!r}")
            value += " " + _strip_comment(lines[i]).strip()
            i += 1
        section[key.strip()] = _parse_value(value)
    return root


def load_config_file(path: str | Path) -> dict:
    with open(path) as f:
        return parse_toml_subset(f.read())


# ---------------------------------------------------------------------------
# pipeline configuration


@dataclass
class TrajectorySpec:
    mode: str = "orbit"           # orbit | poses | static
    frames: int = 30
    max_rotation_deg: float = 6.0
    max_translation: float = 0.1
    poses: list | None = None     # explicit 3x4 row-major pose list

    def generate(self, canonical: CameraSpec, pivot_depth: float) -> list[CameraSpec]:
        if self.mode == "poses":
            if not self.poses:
                raise ValueError("trajectory mode 'poses' requires a nonempty pose list")
            cams = []
            for p in self.poses:
                mat = np.asarray(p, dtype=np.float64).reshape(3, 4)
                cams.append(canonical.with_pose(mat[:, :3], mat[:, 3]))
            return cams
        if self.mode == "static":
            return [canonical.with_pose(canonical.rotation, canonical.translation)
                    for _ in range(self.frames)]
        if self.mode != "orbit":
            raise ValueError(f"unknown trajectory mode {self.mode!r}")
        if self.frames < 1:
            raise ValueError("trajectory must contain at least one pose")
        cams = []
        pivot = np.array([0.0, 0.0, pivot_depth])
        for f in range(self.frames):
            s = 0.0 if self.frames == 1 else 2.0 * f / (self.frames - 1) - 1.0
            yaw = np.deg2rad(self.max_rotation_deg) * s
            cy, sy = np.cos(yaw), np.sin(yaw)
            r = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
            dt = pivot - r @ pivot + np.array([self.max_translation * s, 0.0, 0.0])
            cams.append(canonical.with_pose(r @ canonical.rotation,
                                            r @ canonical.translation + dt))
        return cams


@dataclass
class PipelineConfig:
    content_image: Path | None = None
    depth_file: Path | None = None
    style_image: Path | None = None
    checkpoint: Path | None = None
    camera_file: Path | None = None
    out_dir: Path = Path("out")
    camera_overrides: dict = field(default_factory=dict)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    train: dict = field(default_factory=dict)
    scene: dict = field(default_factory=dict)
    bounds_translation: float = 0.15
    bounds_rotation_deg: float = 10.0

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        raw = load_config_file(path)
        base = Path(path).parent
        cfg = PipelineConfig()
        paths = raw.get("paths", {})

        def respath(key):
            return (base / paths[key]).resolve() if key in paths else None

        cfg.content_image = respath("content_image")
        cfg.depth_file = respath("depth")
        cfg.style_image = respath("style_image")
        cfg.checkpoint = respath("checkpoint")
        cfg.camera_file = respath("camera")
        if "out_dir" in paths:
            cfg.out_dir = (base / paths["out_dir"]).resolve()
        cfg.camera_overrides = raw.get("camera", {})
        traj = raw.get("trajectory", {})
        cfg.trajectory = TrajectorySpec(
            mode=traj.get("mode", "orbit"),
            frames=int(traj.get("frames", 30)),
            max_rotation_deg=float(traj.get("max_rotation_deg", 6.0)),
            max_translation=float(traj.get("max_translation", 0.1)),
            poses=traj.get("poses"))
        cfg.train = raw.get("train", {})
        cfg.scene = raw.get("scene", {})
        bounds = raw.get("bounds", {})
        cfg.bounds_translation = float(bounds.get("translation", 0.15))
        cfg.bounds_rotation_deg = float(bounds.get("rotation_deg", 10.0))
        return cfg
