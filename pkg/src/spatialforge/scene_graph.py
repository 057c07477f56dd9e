"""Per-frame scene graphs and their multi-view merge.

Left/right and front/behind are read in the viewing camera's frame, above/below
along world Z. A relation is only emitted when the difference on its axis
exceeds the configured margin, so near-ties produce no edge at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attributes import ObjectFrameIndex
from .config import Margins
from .geometry import ProjectedBox2d, horizontal_extents, world_to_camera, world_z_extent
from .masks import InstanceMask
from .scene_model import CameraPose, Frame, ObbBox, Scene

INVERSE = {
    "left": "right",
    "right": "left",
    "front": "behind",
    "behind": "front",
    "above": "below",
    "below": "above",
}
DIRECTIONAL = tuple(INVERSE)
COMPARATIVE = ("larger_volume", "taller", "wider", "longer")


@dataclass(frozen=True)
class Edge:
    subject: str
    relation: str
    object: str
    margin: float


@dataclass(frozen=True, eq=False)
class GraphNode:
    object_id: str
    tag: str
    box: ObbBox
    box2d: ProjectedBox2d
    mask: InstanceMask
    cam_center: np.ndarray
    cam_distance: float
    distances: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SceneGraph:
    frame_id: str
    nodes: dict[str, GraphNode]
    edges: tuple[Edge, ...]

    def relations(self, a: str, b: str) -> dict[str, float]:
        return {e.relation: e.margin for e in self.edges if e.subject == a and e.object == b}

    def distance(self, a: str, b: str) -> float:
        return self.nodes[a].distances[b]

    def to_json(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "nodes": [
                {
                    "object_id": n.object_id,
                    "tag": n.tag,
                    "box2d": n.box2d.to_json(),
                    "cam_center": [float(c) for c in n.cam_center],
                    "cam_distance": n.cam_distance,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.object_id)
            ],
            "edges": [[e.subject, e.relation, e.object, e.margin] for e in self.edges],
        }


def pairwise_relation(pose: CameraPose, a: ObbBox, b: ObbBox, margins: Margins = Margins()) -> dict[str, float]:
    """Relations of ``a`` with respect to ``b`` mapped to the margin by which each holds."""
    ca = world_to_camera(pose, np.asarray(a.center))
    cb = world_to_camera(pose, np.asarray(b.center))
    out = {}
    dx = cb[0] - ca[0]
    if abs(dx) > margins.lateral:
        out["left" if dx > 0 else "right"] = float(abs(dx))
    dz = cb[2] - ca[2]
    if abs(dz) > margins.depth:
        out["front" if dz > 0 else "behind"] = float(abs(dz))
    dh = a.center[2] - b.center[2]
    if abs(dh) > margins.vertical:
        out["above" if dh > 0 else "below"] = float(abs(dh))
    return out


@dataclass(frozen=True)
class Comparison:
    winner: str  # "a", "b" or "comparable"
    ratio: float  # >= 1
    metric: bool


def box_dimensions(box: ObbBox) -> dict[str, float]:
    length, width = horizontal_extents(box)
    return {"volume": box.volume, "height": world_z_extent(box), "length": length, "width": width}


def compare_attributes(a: ObbBox, b: ObbBox, comparable_ratio: float = 1.02) -> dict[str, Comparison]:
    da, db = box_dimensions(a), box_dimensions(b)
    metric = a.metric and b.metric
    out = {}
    for name, key in zip(COMPARATIVE, ("volume", "height", "width", "length")):
        va, vb = da[key], db[key]
        hi, lo = max(va, vb), min(va, vb)
        ratio = hi / lo if lo > 0 else math.inf
        if ratio < comparable_ratio:
            winner = "comparable"
        else:
            winner = "a" if va > vb else "b"
        out[name] = Comparison(winner, ratio, metric)
    return out


def surface_distance(a: ObbBox, b: ObbBox) -> float:
    """Closest-point distance between two boxes (0 when they intersect)."""
    from scipy.optimize import lsq_linear

    Ha = a.rotation_matrix * (0.5 * np.asarray(a.extents))
    Hb = b.rotation_matrix * (0.5 * np.asarray(b.extents))
    A = np.hstack([Ha, -Hb])
    rhs = np.asarray(b.center) - np.asarray(a.center)
    res = lsq_linear(A, rhs, bounds=(-1.0, 1.0), tol=1e-12, lsmr_tol="auto")
    return float(np.linalg.norm(A @ res.x - rhs))


def object_distance(a: ObbBox, b: ObbBox, mode: str = "center") -> float:
    if mode == "surface":
        return surface_distance(a, b)
    return float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))


def build_frame_graph(
    scene: Scene,
    index: ObjectFrameIndex,
    frame: Frame | str,
    margins: Margins = Margins(),
    distance_mode: str = "center",
) -> SceneGraph:
    frame = scene.frame_by_id[frame] if isinstance(frame, str) else frame
    visible = sorted(index.visible_objects(frame.frame_id))
    nodes = {}
    for oid in visible:
        box = scene.box_by_id[oid]
        attrs = index.get(oid, frame.frame_id)
        cam = world_to_camera(frame.pose, np.asarray(box.center))
        cam.flags.writeable = False
        nodes[oid] = GraphNode(
            object_id=oid,
            tag=box.tag,
            box=box,
            box2d=attrs.box2d,
            mask=attrs.mask,
            cam_center=cam,
            cam_distance=float(np.linalg.norm(cam)),
        )
    edges = []
    for i, a in enumerate(visible):
        for b in visible[i + 1:]:
            d = object_distance(scene.box_by_id[a], scene.box_by_id[b], distance_mode)
            nodes[a].distances[b] = d
            nodes[b].distances[a] = d
            for rel, m in sorted(pairwise_relation(frame.pose, scene.box_by_id[a], scene.box_by_id[b], margins).items()):
                edges.append(Edge(a, rel, b, m))
                edges.append(Edge(b, INVERSE[rel], a, m))
    return SceneGraph(frame.frame_id, nodes, tuple(edges))


@dataclass(frozen=True)
class RelativePose:
    yaw_deg: float  # in (-180, 180]; positive = counterclockwise seen from above
    translation: tuple[float, float, float]  # world frame, b minus a
    translation_cam: tuple[float, float, float]  # in camera a's frame
    direction: str  # forward/backward/left/right/up/down/stationary


def camera_heading(pose: CameraPose) -> float:
    """Heading of the optical axis projected onto the world XY plane (radians)."""
    fwd = pose.rotation[:, 2]
    if math.hypot(fwd[0], fwd[1]) > 1e-9:
        return math.atan2(fwd[1], fwd[0])
    right = pose.rotation[:, 0]
    return math.atan2(right[1], right[0]) + math.pi / 2


def _wrap_deg(d: float) -> float:
    """Wrap into (-180, 180]."""
    d = math.fmod(d, 360.0)
    if d <= -180.0:
        d += 360.0
    elif d > 180.0:
        d -= 360.0
    return d


def relative_camera_pose(frame_a: Frame, frame_b: Frame, stationary: float = 0.05) -> RelativePose:
    pa, pb = frame_a.pose, frame_b.pose
    yaw = _wrap_deg(math.degrees(camera_heading(pb) - camera_heading(pa)))
    t_world = pb.translation - pa.translation
    t_cam = pa.rotation.T @ t_world
    if np.linalg.norm(t_cam) < stationary:
        direction = "stationary"
    else:
        axis = int(np.argmax(np.abs(t_cam)))
        positive = t_cam[axis] > 0
        direction = [("right", "left"), ("down", "up"), ("forward", "backward")][axis][0 if positive else 1]
    return RelativePose(
        yaw_deg=yaw,
        translation=tuple(float(x) for x in t_world),
        translation_cam=tuple(float(x) for x in t_cam),
        direction=direction,
    )


@dataclass(frozen=True, eq=False)
class MultiViewGraph:
    view_pair: tuple[str, str]
    shared_ids: frozenset[str]
    graph_a: SceneGraph
    graph_b: SceneGraph
    relative_pose: RelativePose


def merge_multiview(
    scene: Scene,
    index: ObjectFrameIndex,
    frame_a: str,
    frame_b: str,
    margins: Margins = Margins(),
    graphs: dict[str, SceneGraph] | None = None,
    stationary: float = 0.05,
) -> MultiViewGraph:
    graphs = graphs or {}
    ga = graphs.get(frame_a) or build_frame_graph(scene, index, frame_a, margins)
    gb = graphs.get(frame_b) or build_frame_graph(scene, index, frame_b, margins)
    shared = index.visible_objects(frame_a) & index.visible_objects(frame_b)
    rel = relative_camera_pose(scene.frame_by_id[frame_a], scene.frame_by_id[frame_b], stationary)
    return MultiViewGraph((frame_a, frame_b), frozenset(shared), ga, gb, rel)

