"""Template evaluation over scene graphs.

Every record gets its own seed derived from the global seed, the scene, its
frames, the sub-task and the object ids it is about, so the output does not
depend on evaluation order. Geometric gates decide *whether* a record exists;
the seed only picks phrasing, marker roles and option order. That keeps
per-sub-task counts fixed under a change of seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np
from scipy import ndimage

from ..attributes import ObjectFrameIndex, stable_seed
from ..config import EngineConfig
from ..geometry import footprint_polygon
from ..scene_graph import (
    SceneGraph,
    box_dimensions,
    build_frame_graph,
    compare_attributes,
    object_distance,
    pairwise_relation,
)
from ..scene_model import Frame, Scene
from .records import Anchor, ImageRef, Provenance, QaRecord, make_record
from .sampling import ViewPair
from .templates import TEMPLATES

LABELS = "ABCDEFGH"
DIRECTIONS = ("left", "right", "front", "behind")
MOVES = ("forward", "backward", "left", "right", "up", "down", "stationary")
SIZE_VARIANTS = (("larger_volume", "volume", "larger"), ("taller", "height", "taller"), ("longer", "length", "longer"))
SM_DIMENSIONS = {"sm_object_height": "height", "sm_object_width": "width", "sm_object_length": "length"}
DISTRACTOR_SCALES = (0.5, 0.75, 1.5)


@dataclass
class SynthContext:
    scene: Scene
    index: ObjectFrameIndex
    config: EngineConfig
    graphs: dict[str, SceneGraph] = field(default_factory=dict)
    _grid: "OccupancyGrid | None" = None

    @property
    def seed(self) -> int:
        return self.config.seed

    def graph(self, frame_id: str) -> SceneGraph:
        if frame_id not in self.graphs:
            self.graphs[frame_id] = build_frame_graph(
                self.scene, self.index, frame_id, self.config.margins, self.config.qa.distance_mode
            )
        return self.graphs[frame_id]

    @property
    def grid(self) -> "OccupancyGrid":
        if self._grid is None:
            self._grid = OccupancyGrid.from_scene(self.scene, self.config.qa.grid_resolution)
        return self._grid


def record_seed(global_seed: int, scene_id: str, frames, subtask: str, slots) -> int:
    return stable_seed(global_seed, scene_id, *frames, subtask, *slots)


def _rng(seed: int, purpose: str) -> random.Random:
    return random.Random(stable_seed(seed, purpose))


def fmt_meters(value: float, decimals: int) -> str:
    return f"{value:.{decimals}f} m"


class _Emitter:
    """Collects records for one frame or view pair."""

    def __init__(self, ctx: SynthContext, frames: tuple[Frame, ...]):
        self.ctx = ctx
        self.frames = frames
        self.frame_ids = tuple(f.frame_id for f in frames)
        self.records: list[QaRecord] = []

    def seed(self, subtask: str, slots) -> int:
        return record_seed(self.ctx.seed, self.ctx.scene.scene_id, self.frame_ids, subtask, slots)

    def emit(self, subtask, seed, answer, options, anchors, variant=None, **qslots) -> None:
        tpl = TEMPLATES[subtask]
        question = tpl.question(stable_seed(seed, "phrasing"), **qslots)
        template_id = subtask if variant is None else f"{subtask}.{variant}"
        self.records.append(
            make_record(
                task=tpl.task,
                subtask=subtask,
                question=question,
                answer=answer,
                options=options,
                anchors=anchors,
                image_refs=[ImageRef(f.frame_id, f.image_ref) for f in self.frames],
                provenance=Provenance(self.ctx.scene.scene_id, template_id, seed),
            )
        )


def _roles(seed: int, ids) -> list[str]:
    """Seeded assignment of marker roles to a sorted id tuple."""
    ids = list(ids)
    _rng(seed, "roles").shuffle(ids)
    return ids


def _shuffled(seed: int, items, purpose: str = "options") -> list[str]:
    items = list(items)
    _rng(seed, purpose).shuffle(items)
    return items


def numeric_choices(truth: float, decimals: int) -> list[str] | None:
    """Truth plus scaled distractors, or None when any two collide after rounding."""
    vals = [fmt_meters(truth, decimals)] + [fmt_meters(truth * s, decimals) for s in DISTRACTOR_SCALES]
    return vals if len(set(vals)) == 4 else None


# single view ---------------------------------------------------------------------


def synthesize_sm(ctx: SynthContext, frame_id: str) -> list[QaRecord]:
    scene, qa = ctx.scene, ctx.config.qa
    frame = scene.frame_by_id[frame_id]
    g = ctx.graph(frame_id)
    em = _Emitter(ctx, (frame,))
    ids = sorted(oid for oid in g.nodes if g.nodes[oid].box.metric)

    def numeric(subtask, seed, truth, anchors, **qslots):
        answer = fmt_meters(truth, qa.decimals)
        # the open/choice split ignores the global seed so answer-type counts do not move with it
        slot_key = stable_seed(scene.scene_id, frame_id, subtask, *sorted(a.object_id for a in anchors))
        if random.Random(slot_key).random() < qa.choice_fraction:
            opts = numeric_choices(truth, qa.decimals)
            if opts is not None:
                em.emit(subtask, seed, answer, _shuffled(seed, opts), anchors, "choice", **qslots)
                return
        em.emit(subtask, seed, answer, None, anchors, "open", **qslots)

    for oid in ids:
        node = g.nodes[oid]
        dims = box_dimensions(node.box)
        anchors = [Anchor(frame_id, oid, "A")]
        for subtask, key in SM_DIMENSIONS.items():
            numeric(subtask, em.seed(subtask, [oid]), dims[key], anchors, a="A", ta=node.tag)
        numeric("sm_camera_distance", em.seed("sm_camera_distance", [oid]), node.cam_distance, anchors, a="A", ta=node.tag)
    for x, y in combinations(ids, 2):
        seed = em.seed("sm_object_distance", [x, y])
        a, b = _roles(seed, (x, y))
        anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
        numeric("sm_object_distance", seed, g.distance(x, y), anchors, a="A", b="B", ta=g.nodes[a].tag, tb=g.nodes[b].tag)
    return em.records


def synthesize_sr(ctx: SynthContext, frame_id: str) -> list[QaRecord]:
    scene, qa, margins = ctx.scene, ctx.config.qa, ctx.config.margins
    frame = scene.frame_by_id[frame_id]
    g = ctx.graph(frame_id)
    em = _Emitter(ctx, (frame,))
    for x, y in combinations(sorted(g.nodes), 2):
        base = dict(a="A", b="B")

        # direction
        seed = em.seed("sr_direction", [x, y])
        a, b = _roles(seed, (x, y))
        na, nb = g.nodes[a], g.nodes[b]
        anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
        tags = dict(base, ta=na.tag, tb=nb.tag)
        rel = pairwise_relation(frame.pose, na.box, nb.box, margins)
        lateral = [r for r in ("left", "right") if r in rel]
        depth = [r for r in ("front", "behind") if r in rel]
        if lateral and depth:
            if _rng(seed, "variant").random() < 0.5:
                em.emit("sr_direction", seed, lateral[0], ["left", "right"], anchors, "lateral", **tags)
            else:
                em.emit("sr_direction", seed, depth[0], ["front", "behind"], anchors, "depth", **tags)
        elif lateral or depth:
            truth = (lateral or depth)[0]
            em.emit("sr_direction", seed, truth, _shuffled(seed, DIRECTIONS), anchors, "4way", **tags)

        # closer to camera
        seed = em.seed("sr_closer_to_camera", [x, y])
        a, b = _roles(seed, (x, y))
        na, nb = g.nodes[a], g.nodes[b]
        if abs(na.cam_distance - nb.cam_distance) > margins.depth:
            truth = "A" if na.cam_distance < nb.cam_distance else "B"
            anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
            em.emit("sr_closer_to_camera", seed, truth, ["A", "B"], anchors, ta=na.tag, tb=nb.tag, **base)

        # size comparisons, one record per decisive attribute
        for name, key, adj in SIZE_VARIANTS:
            seed = em.seed("sr_size_compare", [x, y, key])
            a, b = _roles(seed, (x, y))
            na, nb = g.nodes[a], g.nodes[b]
            comp = compare_attributes(na.box, nb.box, qa.comparable_ratio)[name]
            if comp.winner == "comparable":
                continue
            anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
            em.emit(
                "sr_size_compare", seed, comp.winner.upper(), ["A", "B"], anchors, key,
                adj=adj, ta=na.tag, tb=nb.tag, **base,
            )

        # vertical
        seed = em.seed("sr_vertical", [x, y])
        a, b = _roles(seed, (x, y))
        na, nb = g.nodes[a], g.nodes[b]
        rel = pairwise_relation(frame.pose, na.box, nb.box, margins)
        vertical = [r for r in ("above", "below") if r in rel]
        if vertical:
            anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
            em.emit("sr_vertical", seed, vertical[0], ["above", "below"], anchors, ta=na.tag, tb=nb.tag, **base)
    return em.records


def bearing_class(u: float, cx: float, width: int, margin: float) -> str | None:
    """left/center/right of the principal point column; None near the margin."""
    d = u - cx
    m = margin * width
    if abs(abs(d) - m) < 0.01 * width:
        return None
    if abs(d) <= m:
        return "center"
    return "right" if d > 0 else "left"


def distance_class(dist: float, near: float, far: float, margin: float) -> str | None:
    if abs(dist - near) < margin or abs(dist - far) < margin:
        return None
    if dist < near:
        return "near"
    return "medium" if dist < far else "far"


def synthesize_cp_frame(ctx: SynthContext, frame_id: str) -> list[QaRecord]:
    qa = ctx.config.qa
    frame = ctx.scene.frame_by_id[frame_id]
    K = frame.intrinsics
    g = ctx.graph(frame_id)
    em = _Emitter(ctx, (frame,))
    for oid in sorted(g.nodes):
        node = g.nodes[oid]
        anchors = [Anchor(frame_id, oid, "A")]
        x, _, z = node.cam_center
        if z > 0:
            truth = bearing_class(K.fx * x / z + K.cx, K.cx, K.width, qa.bearing_margin)
            if truth is not None:
                seed = em.seed("cp_object_bearing", [oid])
                em.emit("cp_object_bearing", seed, truth, ["left", "center", "right"], anchors, a="A", ta=node.tag)
        truth = distance_class(node.cam_distance, qa.near_threshold, qa.far_threshold, qa.class_margin)
        if truth is not None:
            seed = em.seed("cp_distance_class", [oid])
            em.emit("cp_distance_class", seed, truth, ["near", "medium", "far"], anchors, a="A", ta=node.tag)
    return em.records


def rotation_class(yaw_deg: float, deadband: float) -> str | None:
    """Positive yaw delta (counterclockwise from above) is a left turn."""
    if abs(abs(yaw_deg) - deadband) < 1.0 or abs(yaw_deg) > 175.0:
        return None
    if abs(yaw_deg) < deadband:
        return "none"
    return "left" if yaw_deg > 0 else "right"


def movement_class(t_cam, stationary: float) -> str | None:
    """Dominant translation axis in the first camera's frame; None when two axes compete."""
    t = np.asarray(t_cam, dtype=float)
    n = float(np.linalg.norm(t))
    if abs(n - stationary) < 0.01:
        return None
    if n < stationary:
        return "stationary"
    mags = np.sort(np.abs(t))
    if mags[1] > 0.8 * mags[2]:
        return None
    axis = int(np.argmax(np.abs(t)))
    return [("right", "left"), ("down", "up"), ("forward", "backward")][axis][0 if t[axis] > 0 else 1]


def synthesize_cp_pair(ctx: SynthContext, pair: ViewPair) -> list[QaRecord]:
    qa = ctx.config.qa
    frames = (ctx.scene.frame_by_id[pair.frame_a], ctx.scene.frame_by_id[pair.frame_b])
    em = _Emitter(ctx, frames)
    truth = rotation_class(pair.pose_delta.yaw_deg, qa.rotation_deadband)
    if truth is not None:
        seed = em.seed("cp_camera_rotation", [])
        em.emit("cp_camera_rotation", seed, truth, ["left", "right", "none"], [])
    truth = movement_class(pair.pose_delta.translation_cam, qa.stationary_threshold)
    if truth is not None:
        seed = em.seed("cp_camera_movement", [])
        others = _shuffled(seed, [m for m in MOVES if m != truth], "distractors")[:3]
        em.emit("cp_camera_movement", seed, truth, _shuffled(seed, [truth, *others]), [])
    return em.records


# multi view ----------------------------------------------------------------------


def reid_candidates(scene: Scene, target: str, view_b: frozenset[str]) -> list[str]:
    """Target plus up to 3 distractors from view 2: same tag first, then by distance."""
    box = scene.box_by_id[target]
    others = [o for o in view_b if o != target]

    def key(o):
        return (scene.box_by_id[o].tag != box.tag, object_distance(box, scene.box_by_id[o]), o)

    return [target, *sorted(others, key=key)[:3]]


def synthesize_mc(ctx: SynthContext, pair: ViewPair) -> list[QaRecord]:
    scene, index = ctx.scene, ctx.index
    fa, fb = pair.frame_a, pair.frame_b
    frames = (scene.frame_by_id[fa], scene.frame_by_id[fb])
    em = _Emitter(ctx, frames)
    vis_a, vis_b = index.visible_objects(fa), index.visible_objects(fb)
    shared = vis_a & vis_b

    if len(vis_b) >= 2:
        for oid in sorted(shared):
            seed = em.seed("mc_reidentify", [oid])
            cands = _shuffled(seed, reid_candidates(scene, oid, vis_b), "candidates")
            labels = [str(i + 1) for i in range(len(cands))]
            anchors = [Anchor(fa, oid, "A")] + [Anchor(fb, c, lab) for c, lab in zip(cands, labels)]
            truth = labels[cands.index(oid)]
            em.emit("mc_reidentify", seed, truth, labels, anchors, a="A", ta=scene.box_by_id[oid].tag)

    seed = em.seed("mc_shared_count", [])
    em.emit("mc_shared_count", seed, str(len(shared)), None, [])

    for oid in sorted(vis_a):
        seed = em.seed("mc_presence", [oid])
        truth = "yes" if oid in vis_b else "no"
        em.emit("mc_presence", seed, truth, ["yes", "no"], [Anchor(fa, oid, "A")], a="A", ta=scene.box_by_id[oid].tag)
    return em.records


# scene-aware reasoning -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Scene XY bounds rasterized at ``resolution``; per-box footprint cell masks."""

    origin: tuple[float, float]
    resolution: float
    shape: tuple[int, int]  # (nx, ny)
    footprints: dict[str, np.ndarray]

    @classmethod
    def from_scene(cls, scene: Scene, resolution: float = 0.1) -> "OccupancyGrid":
        polys = {b.id: footprint_polygon(b) for b in scene.boxes}
        if polys:
            pts = np.vstack(list(polys.values()))
            lo, hi = pts.min(axis=0), pts.max(axis=0)
        else:
            lo, hi = np.zeros(2), np.full(2, resolution)
        nx, ny = (max(1, int(math.ceil((hi[i] - lo[i]) / resolution - 1e-9))) for i in range(2))
        xs = lo[0] + (np.arange(nx) + 0.5) * resolution
        ys = lo[1] + (np.arange(ny) + 0.5) * resolution
        cx, cy = np.meshgrid(xs, ys, indexing="ij")
        centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
        fps = {bid: _in_convex(poly, centers).reshape(nx, ny) for bid, poly in polys.items()}
        return cls((float(lo[0]), float(lo[1])), resolution, (nx, ny), fps)

    def cell(self, xy) -> tuple[int, int]:
        i = int(np.clip(math.floor((xy[0] - self.origin[0]) / self.resolution), 0, self.shape[0] - 1))
        j = int(np.clip(math.floor((xy[1] - self.origin[1]) / self.resolution), 0, self.shape[1] - 1))
        return i, j

    def blocked(self, exclude=()) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for bid, fp in self.footprints.items():
            if bid not in exclude:
                out |= fp
        return out

    def connected(self, start_xy, goal_xy, exclude=()) -> bool:
        blocked = self.blocked(exclude)
        s, t = self.cell(start_xy), self.cell(goal_xy)
        if blocked[s] or blocked[t]:
            return False
        labels, _ = ndimage.label(~blocked)  # default structure is 4-connected
        return labels[s] == labels[t]


def _in_convex(poly: np.ndarray, pts: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Points inside or on a counterclockwise convex polygon."""
    inside = np.ones(len(pts), dtype=bool)
    for p, q in zip(poly, np.roll(poly, -1, axis=0)):
        e = q - p
        cross = e[0] * (pts[:, 1] - p[1]) - e[1] * (pts[:, 0] - p[0])
        inside &= cross >= -eps
    return inside


def synthesize_sar(ctx: SynthContext, frame_id: str) -> list[QaRecord]:
    scene, qa = ctx.scene, ctx.config.qa
    frame = scene.frame_by_id[frame_id]
    K = frame.intrinsics
    g = ctx.graph(frame_id)
    em = _Emitter(ctx, (frame,))
    ids = sorted(g.nodes)

    # nearest object among the three closest others
    for oid in ids:
        others = sorted((g.distance(oid, o), o) for o in ids if o != oid)
        if len(others) < 3:
            continue
        top = others[:3]
        if top[1][0] - top[0][0] < qa.nearest_margin:
            continue
        seed = em.seed("sar_nearest_object", [oid])
        cands = _shuffled(seed, [o for _, o in top], "candidates")
        labels = ["B", "C", "D"]
        anchors = [Anchor(frame_id, oid, "A")] + [Anchor(frame_id, c, lab) for c, lab in zip(cands, labels)]
        truth = labels[cands.index(top[0][1])]
        em.emit("sar_nearest_object", seed, truth, labels, anchors, a="A", b="B", c="C", d="D", ta=g.nodes[oid].tag)

    # category count, anchored on the lowest visible id of each tag
    first_of_tag: dict[str, str] = {}
    for oid in ids:
        first_of_tag.setdefault(g.nodes[oid].tag, oid)
    for tag, oid in sorted(first_of_tag.items()):
        count = len({b.id for b in scene.boxes if b.tag == tag})
        seed = em.seed("sar_category_count", [tag])
        em.emit("sar_category_count", seed, str(count), None, [Anchor(frame_id, oid, "A")], a="A", ta=tag)

    # left-to-right order of three objects with well-separated columns
    cols = {}
    for oid in ids:
        x, _, z = g.nodes[oid].cam_center
        if z > 0:
            cols[oid] = K.fx * x / z + K.cx
    gap = qa.order_margin * K.width
    for trip in combinations(sorted(cols), 3):
        ordered = sorted(trip, key=lambda o: cols[o])
        us = [cols[o] for o in ordered]
        if us[1] - us[0] < gap or us[2] - us[1] < gap:
            continue
        seed = em.seed("sar_left_to_right_order", list(trip))
        roles = _roles(seed, trip)
        label_of = {o: LABELS[i] for i, o in enumerate(roles)}
        truth = ", ".join(label_of[o] for o in ordered)
        perms = [", ".join(p) for p in permutations("ABC")]
        others = _shuffled(seed, [p for p in perms if p != truth], "distractors")[:3]
        anchors = [Anchor(frame_id, o, label_of[o]) for o in roles]
        em.emit("sar_left_to_right_order", seed, truth, _shuffled(seed, [truth, *others]), anchors, a="A", b="B", c="C")

    # traversability between two marked objects' floor positions
    grid = ctx.grid
    for x, y in combinations(ids, 2):
        seed = em.seed("sar_traversability", [x, y])
        a, b = _roles(seed, (x, y))
        ba, bb = scene.box_by_id[a], scene.box_by_id[b]
        ok = grid.connected(ba.center[:2], bb.center[:2], exclude={a, b})
        anchors = [Anchor(frame_id, a, "A"), Anchor(frame_id, b, "B")]
        em.emit(
            "sar_traversability", seed, "yes" if ok else "no", ["yes", "no"], anchors,
            a="A", b="B", ta=ba.tag, tb=bb.tag,
        )
    return em.records


# drivers -------------------------------------------------------------------------


def synthesize_frame(ctx: SynthContext, frame_id: str) -> list[QaRecord]:
    return [
        *synthesize_sm(ctx, frame_id),
        *synthesize_sr(ctx, frame_id),
        *synthesize_cp_frame(ctx, frame_id),
        *synthesize_sar(ctx, frame_id),
    ]


def synthesize_pair(ctx: SynthContext, pair: ViewPair) -> list[QaRecord]:
    return [*synthesize_cp_pair(ctx, pair), *synthesize_mc(ctx, pair)]


def apply_quotas(records, quotas: dict[str, int]) -> list[QaRecord]:
    """Keep the first ``quota`` records by record_id per (scene, sub-task)."""
    groups: dict[tuple[str, str], list[QaRecord]] = {}
    for r in records:
        groups.setdefault((r.provenance.scene_id, r.subtask), []).append(r)
    out = []
    for (_, subtask), recs in groups.items():
        recs.sort(key=lambda r: r.record_id)
        out.extend(recs[: quotas[subtask]] if subtask in quotas else recs)
    return sorted(out, key=lambda r: r.record_id)


def synthesize_scene(
    scene: Scene, index: ObjectFrameIndex, config: EngineConfig, pairs: list[ViewPair] | None = None
) -> list[QaRecord]:
    from .sampling import sample_view_pairs

    ctx = SynthContext(scene, index, config)
    if pairs is None:
        p = config.pairs
        pairs = sample_view_pairs(scene, index, p.min_shared, p.max_pairs, p.min_yaw_delta, config.seed)
    records = []
    for f in scene.frames:
        records.extend(synthesize_frame(ctx, f.frame_id))
    for pair in pairs:
        records.extend(synthesize_pair(ctx, pair))
    return apply_quotas(records, config.qa.quotas)
