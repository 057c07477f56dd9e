"""Stateless geometric kernel: corners, transforms, pinhole projection, frustum tests.

Functions accept a single point ``(3,)`` or a batch ``(N, 3)`` unless noted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .scene_model import CameraIntrinsics, CameraPose, ObbBox

# corner i uses +half-extent on local axis k iff bit k of i is set
_CORNER_SIGNS = np.array(
    [[1 if (i >> k) & 1 else -1 for k in range(3)] for i in range(8)], dtype=float
)


class OutsideFrustumError(ValueError):
    pass


class FrustumClass(str, enum.Enum):
    INSIDE = "inside"
    PARTIAL = "partial"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class ProjectedBox2d:
    min_u: float
    min_v: float
    max_u: float
    max_v: float
    clipped: bool
    visible_corner_count: int

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer pixel range ``[u0, u1) x [v0, v1)`` covered by the box."""
        u0 = max(0, int(np.ceil(self.min_u)))
        v0 = max(0, int(np.ceil(self.min_v)))
        u1 = min(width, int(np.floor(self.max_u)) + 1)
        v1 = min(height, int(np.floor(self.max_v)) + 1)
        return u0, v0, max(u0, u1), max(v0, v1)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.min_u + self.max_u), 0.5 * (self.min_v + self.max_v)

    def to_json(self) -> dict:
        return {
            "min_u": self.min_u,
            "min_v": self.min_v,
            "max_u": self.max_u,
            "max_v": self.max_v,
            "clipped": self.clipped,
            "visible_corner_count": self.visible_corner_count,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProjectedBox2d":
        return cls(**data)


def obb_corners(box: ObbBox) -> np.ndarray:
    """The 8 world-frame corners, shape (8, 3)."""
    half = _CORNER_SIGNS * (0.5 * np.asarray(box.extents))
    return np.asarray(box.center) + half @ box.rotation_matrix.T


def world_to_camera(pose: CameraPose, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return (p - pose.translation) @ pose.rotation


def camera_to_world(pose: CameraPose, p_cam: np.ndarray) -> np.ndarray:
    p_cam = np.asarray(p_cam, dtype=float)
    return p_cam @ pose.rotation.T + pose.translation


def project_point(K: CameraIntrinsics, p_cam) -> tuple[float, float, float] | None:
    """Pinhole projection; ``None`` when the point is not in front of the camera.

    Out-of-image pixels are returned unclipped.
    """
    x, y, z = (float(c) for c in p_cam)
    if not z > 0:
        return None
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy, z


def project_points(K: CameraIntrinsics, p_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: returns ``(uv (N, 2), in_front (N,))``.

    Rows that are behind the camera hold NaN.
    """
    p_cam = np.atleast_2d(np.asarray(p_cam, dtype=float))
    z = p_cam[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, K.fx * p_cam[:, 0] / z + K.cx, np.nan)
        v = np.where(in_front, K.fy * p_cam[:, 1] / z + K.cy, np.nan)
    return np.stack([u, v], axis=1), in_front


def backproject_pixel(K: CameraIntrinsics, pose: CameraPose, u: float, v: float, depth: float) -> np.ndarray:
    if not depth > 0:
        raise ValueError("depth must be positive")
    p_cam = np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])
    return camera_to_world(pose, p_cam)


def backproject_pixels(
    K: CameraIntrinsics, pose: CameraPose, u: np.ndarray, v: np.ndarray, depth: np.ndarray
) -> np.ndarray:
    """Batch back-projection to world points, shape (N, 3). Depths must be positive."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(~(depth > 0)):
        raise ValueError("depth must be positive")
    p_cam = np.stack([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth], axis=-1)
    return camera_to_world(pose, p_cam.reshape(-1, 3))


def points_in_obb(box: ObbBox, points: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Boolean membership per point, shape (N,)."""
    local = (np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(box.center)) @ box.rotation_matrix
    return np.all(np.abs(local) <= 0.5 * np.asarray(box.extents) + eps, axis=1)


def point_in_obb(box: ObbBox, p, eps: float = 1e-9) -> bool:
    return bool(points_in_obb(box, np.asarray(p, dtype=float).reshape(1, 3), eps)[0])


def _project_corners(K: CameraIntrinsics, pose: CameraPose, box: ObbBox):
    uv, in_front = project_points(K, world_to_camera(pose, obb_corners(box)))
    with np.errstate(invalid="ignore"):
        in_image = (
            in_front
            & (uv[:, 0] >= 0)
            & (uv[:, 0] < K.width)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] < K.height)
        )
    return uv, in_front, in_image


def frustum_test(K: CameraIntrinsics, pose: CameraPose, box: ObbBox) -> FrustumClass:
    """Classify a box against the view frustum from its 8 projected corners.

    A box whose corners all miss the image is still ``PARTIAL`` when the hull
    of its in-front corners overlaps the image (e.g. a table filling the view).
    """
    uv, in_front, in_image = _project_corners(K, pose, box)
    if in_image.all():
        return FrustumClass.INSIDE
    if in_image.any():
        return FrustumClass.PARTIAL
    if not in_front.any():
        return FrustumClass.OUTSIDE
    front = uv[in_front]
    lo, hi = front.min(axis=0), front.max(axis=0)
    if hi[0] < 0 or lo[0] >= K.width or hi[1] < 0 or lo[1] >= K.height:
        return FrustumClass.OUTSIDE
    return FrustumClass.PARTIAL


def project_obb(K: CameraIntrinsics, pose: CameraPose, box: ObbBox) -> ProjectedBox2d:
    """Axis-aligned hull of the in-front projected corners, clipped to ``[0, W] x [0, H]``."""
    if frustum_test(K, pose, box) is FrustumClass.OUTSIDE:
        raise OutsideFrustumError(f"box {box.id!r} is outside the frustum")
    uv, in_front, in_image = _project_corners(K, pose, box)
    front = uv[in_front]
    lo, hi = front.min(axis=0), front.max(axis=0)
    return ProjectedBox2d(
        min_u=float(np.clip(lo[0], 0, K.width)),
        min_v=float(np.clip(lo[1], 0, K.height)),
        max_u=float(np.clip(hi[0], 0, K.width)),
        max_v=float(np.clip(hi[1], 0, K.height)),
        clipped=not bool(in_image.all()),
        visible_corner_count=int(in_image.sum()),
    )


def world_z_extent(box: ObbBox) -> float:
    z = obb_corners(box)[:, 2]
    return float(z.max() - z.min())


def horizontal_extents(box: ObbBox) -> tuple[float, float]:
    """Footprint side lengths (larger, smaller) measured in the box's own yaw frame."""
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    xy = obb_corners(box)[:, :2] - np.asarray(box.center[:2])
    local = xy @ np.array([[c, -s], [s, c]])
    span = local.max(axis=0) - local.min(axis=0)
    return float(span.max()), float(span.min())


def footprint_polygon(box: ObbBox) -> np.ndarray:
    """Convex XY footprint of the box (vertices CCW)."""
    from scipy.spatial import ConvexHull

    xy = obb_corners(box)[:, :2]
    try:
        hull = ConvexHull(xy)
    except Exception:  # flat footprint (box standing on an edge)
        return xy[[0, 1, 3, 2]]
    return xy[hull.vertices]
