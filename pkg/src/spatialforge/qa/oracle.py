"""Independent answer recomputation.

Works from raw box parameters and camera poses with its own closed-form
geometry; the object-frame index is consulted only for visibility. Nothing
here imports the graph or geometry modules used during synthesis.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..attributes import ObjectFrameIndex
from ..config import EngineConfig
from ..scene_model import Frame, ObbBox, Scene
from .records import QaRecord
from .templates import TEMPLATES


class UnknownTemplateError(KeyError):
    pass


def _rot(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def _half_axes(box: ObbBox) -> np.ndarray:
    """Columns are the box's half-extent vectors in world coordinates."""
    return _rot(*box.rotation) * (np.asarray(box.extents, dtype=float) / 2)


def _height(box: ObbBox) -> float:
    return float(2 * np.abs(_half_axes(box)[2]).sum())


def _length_width(box: ObbBox) -> tuple[float, float]:
    H = _half_axes(box)[:2]
    yaw = box.rotation[2]
    u = np.array([math.cos(yaw), math.sin(yaw)])
    v = np.array([-math.sin(yaw), math.cos(yaw)])
    du, dv = 2 * np.abs(u @ H).sum(), 2 * np.abs(v @ H).sum()
    return float(max(du, dv)), float(min(du, dv))


def _volume(box: ObbBox) -> float:
    x, y, z = box.extents
    return float(x * y * z)


def _cam(frame: Frame, p) -> np.ndarray:
    R, t = frame.pose.rotation, frame.pose.translation
    d = np.asarray(p, dtype=float) - t
    return np.array([R[:, 0] @ d, R[:, 1] @ d, R[:, 2] @ d])


def _surface_distance(a: ObbBox, b: ObbBox, iters: int = 4000) -> float:
    """Distance between two boxes by projected gradient on their local parameters."""
    Ha, Hb = _half_axes(a), _half_axes(b)
    ca, cb = np.asarray(a.center, float), np.asarray(b.center, float)
    s = np.zeros(3)
    t = np.zeros(3)
    step = 0.5 / max(np.linalg.norm(Ha, 2) ** 2, np.linalg.norm(Hb, 2) ** 2)
    for _ in range(iters):
        r = ca + Ha @ s - cb - Hb @ t
        s = np.clip(s - step * (Ha.T @ r), -1, 1)
        r = ca + Ha @ s - cb - Hb @ t
        t = np.clip(t + step * (Hb.T @ r), -1, 1)
    return float(np.linalg.norm(ca + Ha @ s - cb - Hb @ t))


def _distance(a: ObbBox, b: ObbBox, mode: str) -> float:
    if mode == "surface":
        return _surface_distance(a, b)
    return float(math.dist(a.center, b.center))


def _meters(v: float, decimals: int) -> str:
    return f"{round(v, decimals):.{decimals}f} m"


def _heading(frame: Frame) -> float:
    R = frame.pose.rotation
    fx, fy = R[0, 2], R[1, 2]
    if math.hypot(fx, fy) > 1e-9:
        return math.atan2(fy, fx)
    return math.atan2(R[1, 0], R[0, 0]) + math.pi / 2


def _column(frame: Frame, box: ObbBox) -> float | None:
    x, _, z = _cam(frame, box.center)
    if z <= 0:
        return None
    K = frame.intrinsics
    return K.fx * x / z + K.cx


def _footprint_cells(box: ObbBox, centers: np.ndarray) -> np.ndarray:
    import shapely

    H = _half_axes(box)
    signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
    corners = np.asarray(box.center) + signs @ H.T
    hull = shapely.MultiPoint(corners[:, :2]).convex_hull.buffer(1e-9)
    return shapely.covers(hull, shapely.points(centers))


def _bfs(free: np.ndarray, start, goal) -> bool:
    if not (free[start] and free[goal]):
        return False
    seen = np.zeros_like(free)
    seen[start] = True
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        if (i, j) == goal:
            return True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < free.shape[0] and 0 <= b < free.shape[1] and free[a, b] and not seen[a, b]:
                seen[a, b] = True
                queue.append((a, b))
    return False


def _scene_grid(scene: Scene, res: float):
    boxes = scene.boxes
    H = [_half_axes(x) for x in boxes]
    ext = np.array([np.abs(h[:2]).sum(axis=1) for h in H])  # xy half-extents of each footprint
    centers = np.array([x.center[:2] for x in boxes], dtype=float)
    lo = (centers - ext).min(axis=0)
    hi = (centers + ext).max(axis=0)
    nx, ny = (max(1, int(math.ceil((hi[k] - lo[k]) / res - 1e-9))) for k in range(2))
    cells = np.array([(lo[0] + (i + 0.5) * res, lo[1] + (j + 0.5) * res) for i in range(nx) for j in range(ny)])
    cover = {x.id: _footprint_cells(x, cells).reshape(nx, ny) for x in boxes}
    return lo, (nx, ny), cover


def _traversable(scene: Scene, a: ObbBox, b: ObbBox, res: float, cache: dict) -> bool:
    key = ("grid", res)
    if key not in cache:
        cache[key] = _scene_grid(scene, res)
    lo, (nx, ny), cover = cache[key]
    free = np.ones((nx, ny), dtype=bool)
    for bid, cells in cover.items():
        if bid not in (a.id, b.id):
            free &= ~cells

    def cell(p):
        return (
            min(max(int(math.floor((p[0] - lo[0]) / res)), 0), nx - 1),
            min(max(int(math.floor((p[1] - lo[1]) / res)), 0), ny - 1),
        )

    return _bfs(free, cell(a.center), cell(b.center))


@dataclass
class _Ctx:
    rec: QaRecord
    scene: Scene
    index: ObjectFrameIndex
    cfg: EngineConfig
    cache: dict

    def frame(self, i: int = 0) -> Frame:
        return self.scene.frame_by_id[self.rec.image_refs[i].frame_id]

    def box(self, label: str, frame_i: int = 0) -> ObbBox:
        a = self.rec.anchor(label, self.rec.image_refs[frame_i].frame_id)
        return self.scene.box_by_id[a.object_id]

    @property
    def variant(self) -> str:
        tid = self.rec.provenance.template_id
        return tid.split(".", 1)[1] if "." in tid else ""


def _sm(c: _Ctx) -> str:
    d = c.cfg.qa.decimals
    st = c.rec.subtask
    if st == "sm_object_distance":
        return _meters(_distance(c.box("A"), c.box("B"), c.cfg.qa.distance_mode), d)
    a = c.box("A")
    if st == "sm_camera_distance":
        return _meters(float(np.linalg.norm(_cam(c.frame(), a.center))), d)
    if st == "sm_object_height":
        return _meters(_height(a), d)
    length, width = _length_width(a)
    return _meters(length if st == "sm_object_length" else width, d)


def _sr(c: _Ctx) -> str | None:
    m = c.cfg.margins
    st = c.rec.subtask
    a, b = c.box("A"), c.box("B")
    f = c.frame()
    pa, pb = _cam(f, a.center), _cam(f, b.center)
    if st == "sr_direction":
        dx, dz = pb[0] - pa[0], pb[2] - pa[2]
        lat = ("left" if dx > 0 else "right") if abs(dx) > m.lateral else None
        dep = ("front" if dz > 0 else "behind") if abs(dz) > m.depth else None
        if c.variant == "lateral":
            return lat
        if c.variant == "depth":
            return dep
        if (lat is None) == (dep is None):
            return None
        return lat or dep
    if st == "sr_closer_to_camera":
        da, db = np.linalg.norm(pa), np.linalg.norm(pb)
        if abs(da - db) <= m.depth:
            return None
        return "A" if da < db else "B"
    if st == "sr_size_compare":
        measure = {"volume": _volume, "height": _height, "length": lambda x: _length_width(x)[0]}[c.variant]
        va, vb = measure(a), measure(b)
        if max(va, vb) < c.cfg.qa.comparable_ratio * min(va, vb):
            return None
        return "A" if va > vb else "B"
    if st == "sr_vertical":
        dh = a.center[2] - b.center[2]
        if abs(dh) <= m.vertical:
            return None
        return "above" if dh > 0 else "below"
    return None


def _cp(c: _Ctx) -> str | None:
    qa = c.cfg.qa
    st = c.rec.subtask
    if st == "cp_object_bearing":
        f = c.frame()
        u = _column(f, c.box("A"))
        if u is None:
            return None
        W = f.intrinsics.width
        off = u - f.intrinsics.cx
        if abs(abs(off) - qa.bearing_margin * W) < 0.01 * W:
            return None
        if abs(off) <= qa.bearing_margin * W:
            return "center"
        return "right" if off > 0 else "left"
    if st == "cp_distance_class":
        dist = float(np.linalg.norm(_cam(c.frame(), c.box("A").center)))
        if min(abs(dist - qa.near_threshold), abs(dist - qa.far_threshold)) < qa.class_margin:
            return None
        return "near" if dist < qa.near_threshold else ("medium" if dist < qa.far_threshold else "far")
    fa, fb = c.frame(0), c.frame(1)
    if st == "cp_camera_rotation":
        yaw = math.degrees(_heading(fb) - _heading(fa))
        yaw = (yaw + 180.0) % 360.0 - 180.0
        if yaw == -180.0:
            yaw = 180.0
        if abs(abs(yaw) - qa.rotation_deadband) < 1.0 or abs(yaw) > 175.0:
            return None
        if abs(yaw) < qa.rotation_deadband:
            return "none"
        return "left" if yaw > 0 else "right"
    if st == "cp_camera_movement":
        t = _cam(fa, fb.pose.translation)
        n = float(np.linalg.norm(t))
        if abs(n - qa.stationary_threshold) < 0.01:
            return None
        if n < qa.stationary_threshold:
            return "stationary"
        order = np.argsort(-np.abs(t))
        if abs(t[order[1]]) > 0.8 * abs(t[order[0]]):
            return None
        k = int(order[0])
        names = {0: ("right", "left"), 1: ("down", "up"), 2: ("forward", "backward")}[k]
        return names[0] if t[k] > 0 else names[1]
    return None


def _mc(c: _Ctx) -> str | None:
    fa, fb = (r.frame_id for r in c.rec.image_refs)
    vis_a = {o for o in (b.id for b in c.scene.boxes) if c.index.is_visible(fa, o)}
    vis_b = {o for o in (b.id for b in c.scene.boxes) if c.index.is_visible(fb, o)}
    st = c.rec.subtask
    if st == "mc_shared_count":
        return str(len(vis_a & vis_b))
    target = c.rec.anchor("A", fa).object_id
    if st == "mc_presence":
        return "yes" if target in vis_b else "no"
    if st == "mc_reidentify":
        hits = [a.marker_label for a in c.rec.anchors if a.frame_id == fb and a.object_id == target]
        return hits[0] if len(hits) == 1 else None
    return None


def _sar(c: _Ctx) -> str | None:
    st = c.rec.subtask
    f = c.frame()
    if st == "sar_category_count":
        tag = c.box("A").tag
        return str(sum(1 for b in c.scene.boxes if b.tag == tag))
    if st == "sar_nearest_object":
        x = c.box("A")
        mode = c.cfg.qa.distance_mode
        ds = sorted((_distance(x, c.box(lab), mode), lab) for lab in ("B", "C", "D"))
        if ds[1][0] - ds[0][0] < c.cfg.qa.nearest_margin:
            return None
        return ds[0][1]
    if st == "sar_left_to_right_order":
        cols = {lab: _column(f, c.box(lab)) for lab in ("A", "B", "C")}
        if any(v is None for v in cols.values()):
            return None
        order = sorted(cols, key=cols.get)
        gap = c.cfg.qa.order_margin * f.intrinsics.width
        if cols[order[1]] - cols[order[0]] < gap or cols[order[2]] - cols[order[1]] < gap:
            return None
        return ", ".join(order)
    if st == "sar_traversability":
        ok = _traversable(c.scene, c.box("A"), c.box("B"), c.cfg.qa.grid_resolution, c.cache)
        return "yes" if ok else "no"
    return None


_FAMILIES = {"SM": _sm, "SR": _sr, "CP": _cp, "MC": _mc, "SAR": _sar}


def answer_oracle(
    record: QaRecord,
    scene: Scene,
    index: ObjectFrameIndex,
    config: EngineConfig = EngineConfig(),
    cache: dict | None = None,
) -> str | None:
    """Recompute ``record``'s answer; None when the oracle finds the question ill-posed.

    ``cache`` may be shared across calls on the same scene.
    """
    if record.provenance.scene_id != scene.scene_id:
        raise ValueError(f"record belongs to scene {record.provenance.scene_id!r}, not {scene.scene_id!r}")
    tpl = TEMPLATES.get(record.subtask)
    if tpl is None or not record.provenance.template_id.startswith(record.subtask):
        raise UnknownTemplateError(record.provenance.template_id)
    return _FAMILIES[tpl.task](_Ctx(record, scene, index, config, {} if cache is None else cache))


@dataclass
class ValidationReport:
    total: int = 0
    answer_ok: int = 0
    anchors_total: int = 0
    anchors_ok: int = 0
    choice_total: int = 0
    choice_ok: int = 0
    metric_violations: int = 0
    failures: list = None

    def __post_init__(self):
        self.failures = self.failures or []

    @property
    def passed(self) -> bool:
        return (
            self.answer_ok == self.total
            and self.anchors_ok == self.anchors_total
            and self.choice_ok == self.choice_total
            and self.metric_violations == 0
        )

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "answer_agreement": self.answer_ok,
            "anchors_total": self.anchors_total,
            "anchors_visible": self.anchors_ok,
            "choice_records": self.choice_total,
            "choice_exactly_one_correct": self.choice_ok,
            "metric_violations": self.metric_violations,
            "passed": self.passed,
            "failures": self.failures[:50],
        }


def validate_records(records, scene: Scene, index: ObjectFrameIndex, config: EngineConfig = EngineConfig(), report=None):
    """Oracle agreement, anchor visibility, option consistency and the metric gate."""
    report = report or ValidationReport()
    cache: dict = {}
    for rec in records:
        report.total += 1
        problems = []
        expected = answer_oracle(rec, scene, index, config, cache)
        if expected is not None and expected == rec.answer:
            report.answer_ok += 1
        else:
            problems.append(f"answer {rec.answer!r} != oracle {expected!r}")
        for a in rec.anchors:
            report.anchors_total += 1
            if index.is_visible(a.frame_id, a.object_id):
                report.anchors_ok += 1
            else:
                problems.append(f"anchor {a.object_id} not visible in {a.frame_id}")
        if rec.options is not None:
            report.choice_total += 1
            if expected is not None and list(rec.options).count(expected) == 1 and rec.answer in rec.options:
                report.choice_ok += 1
            else:
                problems.append("options do not contain exactly one correct answer")
        if rec.task == "SM" and not all(scene.box_by_id[a.object_id].metric for a in rec.anchors):
            report.metric_violations += 1
            problems.append("measurement record on non-metric object")
        if problems:
            report.failures.append({"record_id": rec.record_id, "subtask": rec.subtask, "problems": problems})
    return report
