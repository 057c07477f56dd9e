"""Frame-level object attributes and the object-frame index.

Each scene box is projected into every frame and kept only if it survives
two filters: the frustum test, then a depth-occupancy check that measures how
many of the back-projected pixels inside its 2D region land inside the 3D box.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .adapters import MaskRefinementAdapter, RefinementError, RefinementRequest, refine_mask
from .config import ExtractionConfig
from .geometry import (
    FrustumClass,
    ProjectedBox2d,
    backproject_pixels,
    frustum_test,
    points_in_obb,
    project_obb,
)
from .masks import InstanceMask
from .scene_model import DepthMap, Frame, ObbBox, Scene

log = logging.getLogger(__name__)


def stable_seed(*parts: object) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True, eq=False)
class FrameObjectAttributes:
    object_id: str
    frame_id: str
    tag: str
    metric: bool
    frustum: FrustumClass
    box2d: ProjectedBox2d
    occupancy: float
    visible: bool
    coarse_mask: InstanceMask
    partial_cloud: np.ndarray
    refined_mask: InstanceMask | None = None
    refinement_failed: bool = False

    @property
    def mask(self) -> InstanceMask:
        """Refined mask when available, otherwise the coarse one."""
        return self.refined_mask if self.refined_mask is not None else self.coarse_mask

    def to_json(self) -> dict:
        cloud = np.ascontiguousarray(self.partial_cloud, dtype="<f8")
        return {
            "object_id": self.object_id,
            "frame_id": self.frame_id,
            "tag": self.tag,
            "metric": self.metric,
            "frustum": self.frustum.value,
            "box2d": self.box2d.to_json(),
            "occupancy": self.occupancy,
            "visible": self.visible,
            "coarse_mask": self.coarse_mask.to_json(),
            "refined_mask": None if self.refined_mask is None else self.refined_mask.to_json(),
            "refinement_failed": self.refinement_failed,
            "partial_cloud": base64.b64encode(cloud.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_json(cls, data: dict) -> "FrameObjectAttributes":
        cloud = np.frombuffer(base64.b64decode(data["partial_cloud"]), dtype="<f8").reshape(-1, 3)
        refined = data.get("refined_mask")
        return cls(
            object_id=data["object_id"],
            frame_id=data["frame_id"],
            tag=data["tag"],
            metric=data["metric"],
            frustum=FrustumClass(data["frustum"]),
            box2d=ProjectedBox2d.from_json(data["box2d"]),
            occupancy=data["occupancy"],
            visible=data["visible"],
            coarse_mask=InstanceMask.from_json(data["coarse_mask"]),
            partial_cloud=cloud,
            refined_mask=None if refined is None else InstanceMask.from_json(refined),
            refinement_failed=data["refinement_failed"],
        )


class Occupancy(NamedTuple):
    ratio: float
    pixels: np.ndarray  # (H, W) bool, sampled pixels whose point lies in the box
    points: np.ndarray  # (N, 3) world points of those pixels, row-major pixel order
    n_valid: int


def _membership(
    frame: Frame, depth: DepthMap, box: ObbBox, region: ProjectedBox2d, stride: int, eps: float
):
    K = frame.intrinsics
    u0, v0, u1, v1 = region.pixel_bounds(K.width, K.height)
    us = np.arange(u0, u1, stride)
    vs = np.arange(v0, v1, stride)
    uu, vv = np.meshgrid(us, vs)
    valid = depth.valid[vv, uu]
    inside = np.zeros_like(valid)
    points = np.empty((0, 3))
    if valid.any():
        pts = backproject_pixels(K, frame.pose, uu[valid], vv[valid], depth.values[vv, uu][valid])
        hit = points_in_obb(box, pts, eps)
        inside[valid] = hit
        points = pts[hit]
    return uu, vv, valid, inside, points


def _voxel_ratio(box: ObbBox, points: np.ndarray, voxel_size: float) -> float:
    ext = np.asarray(box.extents)
    dims = np.maximum(1, np.ceil(ext / voxel_size).astype(int))
    if len(points) == 0:
        return 0.0
    local = (points - np.asarray(box.center)) @ box.rotation_matrix + ext / 2
    idx = np.clip(np.floor(local / voxel_size).astype(int), 0, dims - 1)
    occupied = np.unique(np.ravel_multi_index(idx.T, dims)).size
    return occupied / int(np.prod(dims))


def occupancy_ratio(
    frame: Frame,
    depth: DepthMap,
    box: ObbBox,
    region: ProjectedBox2d,
    stride: int = 1,
    eps: float = 1e-9,
    mode: str = "points",
    voxel_size: float = 0.05,
) -> Occupancy:
    """Fraction of valid-depth pixels in ``region`` whose back-projection lies inside ``box``.

    Pixels are sampled every ``stride`` pixels starting at the region's top-left.
    Invalid-depth pixels are excluded from the denominator; an empty
    denominator gives ratio 0. With ``mode="voxels"`` the ratio is instead the
    fraction of the box's voxels that contain at least one such point.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    K = frame.intrinsics
    uu, vv, valid, inside, points = _membership(frame, depth, box, region, stride, eps)
    pixels = np.zeros((K.height, K.width), dtype=bool)
    pixels[vv[inside], uu[inside]] = True
    n_valid = int(valid.sum())
    if mode == "voxels":
        ratio = _voxel_ratio(box, points, voxel_size)
    else:
        ratio = float(inside.sum()) / n_valid if n_valid else 0.0
    return Occupancy(ratio, pixels, points, n_valid)


def _subsample(points: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if len(points) <= cap:
        return points
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[idx]


def _prompt(kind: str, box2d: ProjectedBox2d, mask: InstanceMask):
    if kind == "box2d":
        return [box2d.min_u, box2d.min_v, box2d.max_u, box2d.max_v]
    if kind == "mask":
        return mask.to_json()
    grid = mask.decode()
    vs, us = np.nonzero(grid)
    if us.size == 0:
        u, v = box2d.center
        return [[u, v]]
    cu, cv = us.mean(), vs.mean()
    k = int(np.argmin((us - cu) ** 2 + (vs - cv) ** 2))
    return [[int(us[k]), int(vs[k])]]


def extract_object(
    scene: Scene,
    frame: Frame,
    depth: DepthMap,
    box: ObbBox,
    config: ExtractionConfig,
    refiner: MaskRefinementAdapter | None = None,
) -> FrameObjectAttributes | None:
    K = frame.intrinsics
    cls = frustum_test(K, frame.pose, box)
    if cls is FrustumClass.OUTSIDE:
        return None
    region = project_obb(K, frame.pose, box)
    # full-resolution membership gives the mask and cloud; the ratio uses the stride subgrid
    uu, vv, valid, inside, points = _membership(frame, depth, box, region, 1, config.containment_eps)
    s = config.stride
    if config.occupancy_mode == "voxels":
        on_grid = np.zeros_like(inside)
        on_grid[::s, ::s] = True
        occupancy = _voxel_ratio(box, points[on_grid[inside]], config.voxel_size)
    else:
        n_valid = int(valid[::s, ::s].sum())
        occupancy = float(inside[::s, ::s].sum()) / n_valid if n_valid else 0.0
    pixels = np.zeros((K.height, K.width), dtype=bool)
    pixels[vv[inside], uu[inside]] = True
    coarse = InstanceMask.encode(pixels)
    visible = occupancy >= config.tau
    cloud = _subsample(points, config.max_cloud_points, stable_seed(scene.scene_id, frame.frame_id, box.id))
    cloud = np.array(cloud, dtype=float)
    cloud.flags.writeable = False

    refined, failed = None, False
    if visible and refiner is not None:
        request = RefinementRequest(
            scene_id=scene.scene_id,
            frame_id=frame.frame_id,
            object_id=box.id,
            image_path=str(scene.resolve(frame.image_ref)),
            width=K.width,
            height=K.height,
            prompt_type=config.refine_prompt,
            prompt_data=_prompt(config.refine_prompt, region, coarse),
        )
        try:
            refined = refine_mask(refiner, request)
        except RefinementError as exc:
            log.warning("refinement failed for %s/%s: %s", frame.frame_id, box.id, exc)
            failed = True

    return FrameObjectAttributes(
        object_id=box.id,
        frame_id=frame.frame_id,
        tag=box.tag,
        metric=box.metric,
        frustum=cls,
        box2d=region,
        occupancy=occupancy,
        visible=visible,
        coarse_mask=coarse,
        partial_cloud=cloud,
        refined_mask=refined,
        refinement_failed=failed,
    )


def filter_and_extract(
    scene: Scene,
    frame: Frame,
    depth: DepthMap,
    config: ExtractionConfig = ExtractionConfig(),
    refiner: MaskRefinementAdapter | None = None,
) -> list[FrameObjectAttributes]:
    """One record per box that is not outside the frustum, in scene box order."""
    K = frame.intrinsics
    if (depth.width, depth.height) != (K.width, K.height):
        raise ValueError(
            f"frame {frame.frame_id}: depth is {depth.width}x{depth.height}, intrinsics say {K.width}x{K.height}"
        )
    out = []
    for box in scene.boxes:
        rec = extract_object(scene, frame, depth, box, config, refiner)
        if rec is not None:
            out.append(rec)
    return out


class ObjectFrameIndex:
    """Object id -> frame id -> attributes, plus frame id -> visible object ids."""

    def __init__(
        self,
        scene_id: str,
        forward: dict[str, dict[str, FrameObjectAttributes]],
        reverse: dict[str, frozenset[str]],
    ) -> None:
        self.scene_id = scene_id
        self.forward = forward
        self.reverse = reverse

    def visible_objects(self, frame_id: str) -> frozenset[str]:
        if frame_id not in self.reverse:
            raise KeyError(f"unknown frame {frame_id!r}")
        return self.reverse[frame_id]

    def is_visible(self, frame_id: str, object_id: str) -> bool:
        return object_id in self.reverse.get(frame_id, ())

    def get(self, object_id: str, frame_id: str) -> FrameObjectAttributes | None:
        return self.forward.get(object_id, {}).get(frame_id)

    def visible_frames(self, object_id: str) -> list[str]:
        return sorted(f for f, a in self.forward.get(object_id, {}).items() if a.visible)

    @property
    def frame_ids(self) -> list[str]:
        return list(self.reverse)

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "objects": {
                oid: {fid: self.forward[oid][fid].to_json() for fid in sorted(self.forward[oid])}
                for oid in sorted(self.forward)
            },
            "frames": {fid: sorted(self.reverse[fid]) for fid in sorted(self.reverse)},
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def build_index(scene: Scene, records: Iterable[FrameObjectAttributes]) -> ObjectFrameIndex:
    forward: dict[str, dict[str, FrameObjectAttributes]] = {b.id: {} for b in scene.boxes}
    reverse: dict[str, set[str]] = {f.frame_id: set() for f in scene.frames}
    for rec in records:
        per_obj = forward.setdefault(rec.object_id, {})
        if rec.frame_id in per_obj:
            raise ValueError(f"duplicate record for object {rec.object_id!r} in frame {rec.frame_id!r}")
        per_obj[rec.frame_id] = rec
        if rec.visible:
            reverse.setdefault(rec.frame_id, set()).add(rec.object_id)
    return ObjectFrameIndex(scene.scene_id, forward, {k: frozenset(v) for k, v in reverse.items()})
