"""Lift per-view instance masks into world-frame oriented boxes.

Chain: back-project each detection's mask pixels, drop statistical outliers,
group detections whose axis-aligned bounds overlap, merge the group clouds and
fit a gravity-aligned box to each from the minimum-area rectangle enclosing
the convex hull of its XY footprint.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .adapters import ViewDetection
from .config import LiftConfig
from .geometry import backproject_pixels
from .scene_model import DepthMap, Frame, ObbBox, Scene, matrix_to_euler

log = logging.getLogger(__name__)


class LiftingError(RuntimeError):
    pass


class DegenerateCloudError(ValueError):
    pass


def backproject_detection(frame: Frame, depth: DepthMap, det: ViewDetection, stride: int = 1) -> np.ndarray:
    """World points for every ``stride``-th mask pixel with valid depth."""
    K = frame.intrinsics
    if (det.mask.width, det.mask.height) != (K.width, K.height):
        raise ValueError(f"mask size {det.mask.width}x{det.mask.height} does not match frame {frame.frame_id}")
    grid = det.mask.decode()
    if stride > 1:
        keep = np.zeros_like(grid)
        keep[::stride, ::stride] = True
        grid &= keep
    grid &= depth.valid
    vs, us = np.nonzero(grid)
    if us.size == 0:
        return np.empty((0, 3))
    return backproject_pixels(K, frame.pose, us, vs, depth.values[vs, us])


def remove_outliers(cloud: np.ndarray, k: int = 16, sigma: float = 2.0) -> np.ndarray:
    """Drop points whose mean k-NN distance exceeds ``mean + sigma * std`` over the cloud."""
    from scipy.spatial import cKDTree

    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = len(cloud)
    if n < 3:
        return cloud
    k = min(k, n - 1)
    dist, _ = cKDTree(cloud).query(cloud, k=k + 1)
    mean_knn = dist[:, 1:].mean(axis=1)
    cutoff = mean_knn.mean() + sigma * mean_knn.std()
    return cloud[mean_knn <= cutoff]


def aabb_iou(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]) -> float:
    lo = np.maximum(a[0], b[0])
    hi = np.minimum(a[1], b[1])
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    va = float(np.prod(a[1] - a[0]))
    vb = float(np.prod(b[1] - b[0]))
    union = va + vb - inter
    return inter / union if union > 0 else (1.0 if np.allclose(a, b) else 0.0)


@dataclass(frozen=True, eq=False)
class DetectionCloud:
    frame_id: str
    det_index: int
    tag: str
    confidence: float
    cloud: np.ndarray


def _bounds(cloud: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return cloud.min(axis=0), cloud.max(axis=0)


def _chamfer(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.spatial import cKDTree

    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * (da.mean() + db.mean())


def associate_instances(
    items: Sequence[DetectionCloud],
    iou_threshold: float = 0.3,
    mode: str = "aabb",
    chamfer_threshold: float = 0.05,
) -> list[list[DetectionCloud]]:
    """Greedy agglomerative grouping to a fixed point.

    Two groups merge when their tags match and the IoU of their merged-cloud
    bounds reaches ``iou_threshold`` (or, with ``mode="chamfer"``, their
    chamfer distance is below ``chamfer_threshold``). Empty clouds are dropped.
    """
    ordered = sorted((it for it in items if len(it.cloud)), key=lambda it: (it.frame_id, it.det_index))
    groups = [[it] for it in ordered]
    clouds = [it.cloud for it in ordered]

    def mergeable(i: int, j: int) -> bool:
        if groups[i][0].tag != groups[j][0].tag:
            return False
        if mode == "chamfer":
            return _chamfer(clouds[i], clouds[j]) < chamfer_threshold
        return aabb_iou(_bounds(clouds[i]), _bounds(clouds[j])) >= iou_threshold

    merged = True
    while merged:
        merged = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if mergeable(i, j):
                    groups[i].extend(groups.pop(j))
                    clouds[i] = np.vstack([clouds[i], clouds.pop(j)])
                    merged = True
                    break
            if merged:
                break
    return groups


# ---------------------------------------------------------------------------
# box fitting


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices (Andrew's monotone chain), collinear points removed."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class Rectangle:
    angle: float  # direction of the first side, radians
    length: float  # side along ``angle``
    width: float  # side along the left normal
    center: tuple[float, float]

    @property
    def area(self) -> float:
        return self.length * self.width


def min_area_rectangle(hull: np.ndarray) -> Rectangle:
    """Minimum-area enclosing rectangle of a CCW convex polygon by rotating calipers.

    One side of the optimum is collinear with a hull edge; for each edge the
    three supporting vertices (max/min along the edge, farthest from it)
    advance monotonically around the polygon, so the sweep is linear.
    """
    hull = np.asarray(hull, dtype=float)
    n = len(hull)
    if n < 3:
        raise DegenerateCloudError("hull has fewer than 3 vertices")

    def frame(i: int):
        e = hull[(i + 1) % n] - hull[i]
        d = e / math.hypot(e[0], e[1])
        return d, np.array([-d[1], d[0]])

    d, nrm = frame(0)
    pd = hull @ d
    pn = hull @ nrm
    right = int(np.argmax(pd))
    top = int(np.argmax(pn))
    left = int(np.argmin(pd))
    best: Rectangle | None = None
    for i in range(n):
        d, nrm = frame(i)
        for _ in range(n):
            if hull[(right + 1) % n] @ d >= hull[right] @ d:
                right = (right + 1) % n
            else:
                break
        for _ in range(n):
            if hull[(top + 1) % n] @ nrm >= hull[top] @ nrm:
                top = (top + 1) % n
            else:
                break
        for _ in range(n):
            if hull[(left + 1) % n] @ d <= hull[left] @ d:
                left = (left + 1) % n
            else:
                break
        d_hi, d_lo = hull[right] @ d, hull[left] @ d
        n_lo, n_hi = hull[i] @ nrm, hull[top] @ nrm
        length, width = d_hi - d_lo, n_hi - n_lo
        if best is None or length * width < best.area - 1e-15:
            c = d * 0.5 * (d_hi + d_lo) + nrm * 0.5 * (n_hi + n_lo)
            best = Rectangle(math.atan2(d[1], d[0]), float(length), float(width), (float(c[0]), float(c[1])))
    assert best is not None
    return best


def _canonical_yaw(yaw: float) -> float:
    """Wrap into [-pi/2, pi/2)."""
    return (yaw + math.pi / 2) % math.pi - math.pi / 2


def fit_obb(cloud: np.ndarray, box_id: str = "lifted", tag: str = "object", metric: bool = True) -> ObbBox:
    """Gravity-aligned box: min-area rectangle of the XY hull, Z span of the cloud.

    The result is canonical: ``extents[0] >= extents[1]`` and yaw in [-pi/2, pi/2).
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) < 4:
        raise DegenerateCloudError("need at least 4 points")
    hull = convex_hull_2d(cloud[:, :2])
    if len(hull) < 3 or polygon_area(hull) <= 1e-12:
        raise DegenerateCloudError("cloud footprint is collinear")
    rect = min_area_rectangle(hull)
    yaw, ex, ey = rect.angle, rect.length, rect.width
    if ex < ey:
        yaw, ex, ey = yaw + math.pi / 2, ey, ex
    z_lo, z_hi = float(cloud[:, 2].min()), float(cloud[:, 2].max())
    ez = z_hi - z_lo
    if ez <= 0:
        raise DegenerateCloudError("cloud has no vertical extent")
    return ObbBox(
        id=box_id,
        tag=tag,
        center=(rect.center[0], rect.center[1], 0.5 * (z_lo + z_hi)),
        extents=(ex, ey, ez),
        rotation=(0.0, 0.0, _canonical_yaw(yaw)),
        metric=metric,
    )


def fit_obb_pca(cloud: np.ndarray, box_id: str = "lifted", tag: str = "object", metric: bool = True) -> ObbBox:
    """Full 9-DoF box along the cloud's principal axes."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) < 4:
        raise DegenerateCloudError("need at least 4 points")
    mean = cloud.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((cloud - mean).T))
    R = vecs[:, ::-1]
    if np.linalg.det(R) < 0:
        R[:, 2] = -R[:, 2]
    local = (cloud - mean) @ R
    lo, hi = local.min(axis=0), local.max(axis=0)
    ext = hi - lo
    if np.any(ext <= 1e-12):
        raise DegenerateCloudError("cloud is flat")
    center = mean + R @ (0.5 * (lo + hi))
    return ObbBox(box_id, tag, tuple(center), tuple(ext), matrix_to_euler(R), metric)


def gravity_box_iou(a: ObbBox, b: ObbBox) -> float:
    """3D IoU of two boxes with zero roll and pitch (footprint polygons x Z overlap)."""
    from shapely.geometry import Polygon

    from .geometry import obb_corners

    def footprint(box: ObbBox) -> Polygon:
        xy = obb_corners(box)[:, :2]
        return Polygon(xy[[0, 1, 3, 2]])

    inter_xy = footprint(a).intersection(footprint(b)).area
    za = (a.center[2] - a.extents[2] / 2, a.center[2] + a.extents[2] / 2)
    zb = (b.center[2] - b.extents[2] / 2, b.center[2] + b.extents[2] / 2)
    dz = max(0.0, min(za[1], zb[1]) - max(za[0], zb[0]))
    inter = inter_xy * dz
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# end to end


@dataclass(frozen=True, eq=False)
class LiftedInstance:
    instance_id: str
    tag: str
    members: tuple[tuple[str, int], ...]
    merged_cloud: np.ndarray
    fitted_box: ObbBox


@dataclass(frozen=True, eq=False)
class LiftResult:
    instances: list[LiftedInstance]
    scene: Scene


def _slug(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", tag).strip("_").lower() or "object"


def majority_tag(group: Sequence[DetectionCloud]) -> str:
    votes: Counter = Counter()
    for it in group:
        votes[it.tag] += it.confidence
    return min(votes, key=lambda t: (-votes[t], t))


def detection_clouds(
    frames: Sequence[Frame],
    depths: Mapping[str, DepthMap],
    detections: Mapping[str, Sequence[ViewDetection]],
    config: LiftConfig = LiftConfig(),
) -> list[DetectionCloud]:
    out = []
    for frame in frames:
        for i, det in enumerate(detections.get(frame.frame_id, ())):
            try:
                cloud = backproject_detection(frame, depths[frame.frame_id], det, config.stride)
                cloud = remove_outliers(cloud, config.outlier_k, config.outlier_sigma)
            except Exception as exc:
                raise LiftingError(f"frame {frame.frame_id} detection {i}: {exc}") from exc
            out.append(DetectionCloud(frame.frame_id, i, det.tag, det.confidence, cloud))
    return out


def fit_groups(
    groups: Sequence[Sequence[DetectionCloud]],
    config: LiftConfig = LiftConfig(),
    metric: bool = True,
) -> list[LiftedInstance]:
    instances = []
    per_tag: Counter = Counter()
    for group in groups:
        cloud = np.vstack([it.cloud for it in group])
        members = tuple((it.frame_id, it.det_index) for it in group)
        if len(cloud) < config.min_points:
            log.debug("dropping group %s with %d points", members, len(cloud))
            continue
        tag = majority_tag(group)
        iid = f"{_slug(tag)}_{per_tag[tag]}"
        per_tag[tag] += 1
        fit = fit_obb_pca if config.fit_mode == "pca" else fit_obb
        try:
            box = fit(cloud, iid, tag, metric)
        except DegenerateCloudError as exc:
            raise LiftingError(f"instance {iid} from {list(members)}: {exc}") from exc
        instances.append(LiftedInstance(iid, tag, members, cloud, box))
    return instances


def lift_scene(
    scene: Scene,
    depths: Mapping[str, DepthMap],
    detections: Mapping[str, Sequence[ViewDetection]],
    config: LiftConfig = LiftConfig(),
) -> LiftResult:
    """Run the full lifting chain over ``scene.frames``; existing boxes are replaced."""
    items = detection_clouds(scene.frames, depths, detections, config)
    groups = associate_instances(items, config.iou_threshold, config.association, config.chamfer_threshold)
    instances = fit_groups(groups, config, metric=scene.depth_metric)
    lifted = scene.replace(boxes=tuple(inst.fitted_box for inst in instances), source_tag="lifted")
    return LiftResult(instances, lifted)
