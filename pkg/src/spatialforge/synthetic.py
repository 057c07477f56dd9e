"""Synthetic RGB-D scenes rendered by exact ray-box intersection.

Depth is the analytic distance (along camera Z) to the nearest box surface,
so every back-projected pixel lands on a box face up to float64 rounding.
These scenes are the ground truth for the engine's tests and demos.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .adapters import ViewDetection, detections_to_json
from .masks import InstanceMask
from .scene_model import (
    CameraIntrinsics,
    CameraPose,
    Frame,
    ObbBox,
    Scene,
    save_scene,
    write_depth,
)

NO_HIT = -1


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> CameraPose:
    """Camera-to-world pose looking from ``eye`` to ``target`` (+Z forward, +Y down)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return CameraPose(np.column_stack([right, down, fwd]), eye)


def orbit_poses(
    n: int,
    radius: float,
    height: float,
    target: Sequence[float] = (0.0, 0.0, 0.5),
    start_deg: float = 0.0,
    step_deg: float | None = None,
) -> list[CameraPose]:
    step = 360.0 / n if step_deg is None else step_deg
    out = []
    for i in range(n):
        a = math.radians(start_deg + i * step)
        eye = (target[0] + radius * math.cos(a), target[1] + radius * math.sin(a), height)
        out.append(look_at(eye, target))
    return out


def line_poses(n: int, start: Sequence[float], end: Sequence[float], target: Sequence[float]) -> list[CameraPose]:
    s, e = np.asarray(start, float), np.asarray(end, float)
    return [look_at(s + (e - s) * (i / max(1, n - 1)), target) for i in range(n)]


@dataclass
class SyntheticSceneSpec:
    scene_id: str
    boxes: list[ObbBox]
    poses: list[CameraPose]
    width: int = 160
    height: int = 120
    fx: float = 140.0
    fy: float = 140.0
    occluders: list[ObbBox] = field(default_factory=list)
    depth_format: str = "npy"
    source_tag: str = "synthetic"
    depth_metric: bool = True
    write_detections: bool = False

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, (self.width - 1) / 2, (self.height - 1) / 2, self.width, self.height)


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions with unit Z, shape (H, W, 3)."""
    uu, vv = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    return np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1)


def ray_box_depth(origin: np.ndarray, dirs: np.ndarray, box: ObbBox) -> np.ndarray:
    """Entry parameter ``t`` of each ray into ``box`` (inf on miss or when starting inside).

    With unit-Z camera rays ``t`` equals camera depth.
    """
    R = box.rotation_matrix
    o = (origin - np.asarray(box.center)) @ R
    d = dirs.reshape(-1, 3) @ R
    half = 0.5 * np.asarray(box.extents)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    t1 = np.where(d == 0, np.where(np.abs(o) <= half, -np.inf, np.inf), t1)
    t2 = np.where(d == 0, np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    hit = (tmax >= tmin) & (tmin > 0)
    return np.where(hit, tmin, np.inf).reshape(dirs.shape[:-1])


def render(
    K: CameraIntrinsics,
    pose: CameraPose,
    boxes: Sequence[ObbBox],
    occluders: Sequence[ObbBox] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Depth (0 where nothing is hit) and per-pixel ids.

    Ids index ``boxes``; occluder k is ``-(k + 2)``; ``NO_HIT`` elsewhere.
    """
    dirs_world = pixel_rays(K) @ pose.rotation.T
    depth = np.full((K.height, K.width), np.inf)
    ids = np.full((K.height, K.width), NO_HIT, dtype=np.int64)
    for k, box in enumerate(list(boxes) + list(occluders)):
        t = ray_box_depth(pose.translation, dirs_world, box)
        closer = t < depth
        depth[closer] = t[closer]
        ids[closer] = k if k < len(boxes) else -(k - len(boxes) + 2)
    depth[~np.isfinite(depth)] = 0.0
    return depth, ids


def _palette(k: int) -> np.ndarray:
    rng = np.random.default_rng(1000 + k)
    return rng.integers(60, 230, size=3)


def render_rgb(ids: np.ndarray, depth: np.ndarray) -> np.ndarray:
    img = np.full(ids.shape + (3,), 235, dtype=np.uint8)
    shade = np.clip(1.2 - 0.08 * depth, 0.5, 1.0)
    for k in np.unique(ids):
        if k == NO_HIT:
            continue
        sel = ids == k
        color = np.array([120, 120, 120]) if k < 0 else _palette(int(k))
        img[sel] = (color[None, :] * shade[sel][:, None]).astype(np.uint8)
    return img


def gen_synthetic(spec: SyntheticSceneSpec, out_dir: str | Path) -> Path:
    """Write images, depth maps, optional detections and the manifest; returns the manifest path."""
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    if spec.write_detections:
        (out / "detections").mkdir(parents=True, exist_ok=True)
    K = spec.intrinsics
    ext = {"npy": "npy", "float32": "bin", "png16_mm": "png"}[spec.depth_format]
    frames = []
    for i, pose in enumerate(spec.poses):
        fid = f"frame_{i:04d}"
        depth, ids = render(K, pose, spec.boxes, spec.occluders)
        write_depth(out / "depth" / f"{fid}.{ext}", depth, spec.depth_format)
        Image.fromarray(render_rgb(ids, depth)).save(out / "images" / f"{fid}.png")
        if spec.write_detections:
            dets = [
                ViewDetection(fid, box.tag, 1.0, InstanceMask.encode(ids == k))
                for k, box in enumerate(spec.boxes)
                if np.any(ids == k)
            ]
            (out / "detections" / f"{fid}.json").write_text(json.dumps(detections_to_json(fid, dets)))
        frames.append(
            Frame(
                frame_id=fid,
                image_ref=f"images/{fid}.png",
                depth_ref=f"depth/{fid}.{ext}",
                intrinsics=K,
                pose=pose,
                depth_format=spec.depth_format,
                timestamp=float(i),
            )
        )
    scene = Scene(spec.scene_id, tuple(frames), tuple(spec.boxes), spec.source_tag, spec.depth_metric, out)
    manifest = out / "scene.json"
    save_scene(scene, manifest)
    return manifest


# ---------------------------------------------------------------------------
# canonical scenes


def _box(id, tag, center, extents, yaw_deg=0.0, metric=True) -> ObbBox:
    return ObbBox(id, tag, center, extents, (0.0, 0.0, math.radians(yaw_deg)), metric)


def two_plane_specs(width: int = 160, height: int = 120) -> dict[str, SyntheticSceneSpec]:
    """Box behind a wall, box in the open, box half hidden by a wall."""
    pose = look_at((0.0, -4.0, 0.5), (0.0, 0.0, 0.5))
    target = _box("crate", "crate", (0.0, 0.0, 0.5), (0.8, 0.8, 0.8))
    full_wall = _box("wall", "wall", (0.0, -2.0, 0.5), (4.0, 0.05, 3.0))
    half_wall = _box("wall", "wall", (-1.0, -2.0, 0.5), (2.0, 0.05, 3.0))
    common = dict(boxes=[target], poses=[pose], width=width, height=height)
    return {
        "hidden": SyntheticSceneSpec("two_plane_hidden", occluders=[full_wall], **common),
        "open": SyntheticSceneSpec("two_plane_open", **common),
        "half": SyntheticSceneSpec("two_plane_half", occluders=[half_wall], **common),
    }


def room_boxes(metric: bool = True) -> list[ObbBox]:
    return [
        _box("table_0", "table", (0.0, 0.0, 0.375), (1.6, 0.9, 0.75), 10.0, metric),
        _box("chair_0", "chair", (-1.3, 0.6, 0.45), (0.5, 0.5, 0.9), 30.0, metric),
        _box("chair_1", "chair", (1.2, -0.9, 0.45), (0.5, 0.5, 0.9), -20.0, metric),
        _box("chair_2", "chair", (1.4, 1.1, 0.45), (0.5, 0.5, 0.9), 75.0, metric),
        _box("sofa_0", "sofa", (-0.6, -1.9, 0.4), (2.0, 0.9, 0.8), 5.0, metric),
        _box("lamp_0", "lamp", (-2.1, -0.8, 0.8), (0.3, 0.3, 1.6), 0.0, metric),
        _box("cabinet_0", "cabinet", (0.4, 2.1, 0.6), (1.2, 0.45, 1.2), 0.0, metric),
        _box("box_0", "box", (0.1, 0.05, 0.9), (0.3, 0.25, 0.3), 40.0, metric),
    ]


def orbit_spec(n_frames: int = 10, metric: bool = True, **kw) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        "orbit_room",
        boxes=room_boxes(metric),
        poses=orbit_poses(n_frames, radius=4.5, height=1.8, target=(0.0, 0.0, 0.5)),
        **kw,
    )


def corridor_spec(n_frames: int = 8, metric: bool = True, **kw) -> SyntheticSceneSpec:
    """A row of shelves splitting the floor, seen from a camera moving along it."""
    boxes = [
        _box("shelf_0", "shelf", (0.0, -1.0, 0.9), (0.4, 1.6, 1.8), 0.0, metric),
        _box("shelf_1", "shelf", (0.0, 0.6, 0.9), (0.4, 1.6, 1.8), 0.0, metric),
        _box("shelf_2", "shelf", (0.0, 2.2, 0.9), (0.4, 1.6, 1.8), 0.0, metric),
        _box("bin_0", "bin", (-1.5, 0.0, 0.3), (0.4, 0.4, 0.6), 0.0, metric),
        _box("bin_1", "bin", (1.6, 1.0, 0.3), (0.4, 0.4, 0.6), 15.0, metric),
        _box("desk_0", "desk", (-1.6, 1.8, 0.38), (1.2, 0.6, 0.76), 90.0, metric),
        _box("chair_0", "chair", (1.4, -1.2, 0.45), (0.5, 0.5, 0.9), 45.0, metric),
    ]
    poses = orbit_poses(n_frames, radius=5.0, height=2.2, target=(0.0, 0.5, 0.6), start_deg=-60, step_deg=24)
    return SyntheticSceneSpec("corridor", boxes=boxes, poses=poses, **kw)


def lifting_spec(n_frames: int = 8, **kw) -> SyntheticSceneSpec:
    boxes = [
        _box("table_0", "table", (0.0, 0.0, 0.375), (1.4, 0.8, 0.75), 25.0),
        _box("chair_0", "chair", (-1.4, 0.9, 0.45), (0.5, 0.5, 0.9), -15.0),
        _box("cabinet_0", "cabinet", (1.3, -1.1, 0.6), (1.0, 0.45, 1.2), 60.0),
    ]
    poses = orbit_poses(n_frames, radius=4.0, height=2.0, target=(0.0, 0.0, 0.4))
    kw.setdefault("write_detections", True)
    return SyntheticSceneSpec("lift_three", boxes=boxes, poses=poses, **kw)


def qa_suite_specs(metric: bool = True) -> list[SyntheticSceneSpec]:
    return [orbit_spec(10, metric), corridor_spec(8, metric)]


def write_suite(out_dir: str | Path, specs: Sequence[SyntheticSceneSpec]) -> list[Path]:
    out = Path(out_dir)
    return [gen_synthetic(spec, out / spec.scene_id) for spec in specs]
