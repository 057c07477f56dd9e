from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialforge.config import Margins
from spatialforge.scene_graph import (
    INVERSE,
    build_frame_graph,
    compare_attributes,
    pairwise_relation,
    relative_camera_pose,
    surface_distance,
)
from spatialforge.scene_model import CameraIntrinsics, Frame, ObbBox
from spatialforge.synthetic import look_at

# camera south of the origin looking north: image right is world +X
POSE = look_at((0.0, -5.0, 1.0), (0.0, 0.0, 1.0))
K = CameraIntrinsics(100.0, 100.0, 80.0, 60.0, 160, 120)


def _box(bid, center, extents=(0.4, 0.4, 0.4), yaw=0.0):
    return ObbBox(bid, "thing", center, extents, (0.0, 0.0, yaw))


def test_relation_examples():
    a = _box("a", (-1.0, 0.0, 1.0))
    b = _box("b", (1.0, 0.0, 1.0))
    assert pairwise_relation(POSE, a, b) == {"left": pytest.approx(2.0)}
    assert pairwise_relation(POSE, b, a) == {"right": pytest.approx(2.0)}
    near = _box("n", (0.0, -1.0, 1.0))
    assert set(pairwise_relation(POSE, near, a)) == {"front", "right"}
    top = _box("t", (0.0, 0.0, 2.0))
    bottom = _box("u", (0.0, 0.0, 0.5))
    assert pairwise_relation(POSE, top, bottom) == {"above": pytest.approx(1.5)}


def test_margins_suppress_small_offsets():
    a = _box("a", (0.0, 0.0, 1.0))
    b = _box("b", (0.05, 0.05, 1.02))
    assert pairwise_relation(POSE, a, b, Margins()) == {}
    assert "left" in pairwise_relation(POSE, a, b, Margins(lateral=0.01, depth=0.01, vertical=0.01))


coord = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_relations_are_inverse_symmetric(x1, y1, z1, x2, y2, z2):
    a, b = _box("a", (x1, y1, z1)), _box("b", (x2, y2, z2))
    ab, ba = pairwise_relation(POSE, a, b), pairwise_relation(POSE, b, a)
    assert {INVERSE[r]: m for r, m in ab.items()} == pytest.approx(ba)


def test_graph_edges_have_inverses(orbit):
    scene, index = orbit
    g = build_frame_graph(scene, index, scene.frames[0].frame_id)
    edges = {(e.subject, e.relation, e.object) for e in g.edges}
    assert edges and all((o, INVERSE[r], s) in edges for s, r, o in edges)
    assert set(g.nodes) == set(index.visible_objects(scene.frames[0].frame_id))


def _brute_distance(a: ObbBox, b: ObbBox, n: int = 21) -> float:
    def samples(box):
        t = np.linspace(-0.5, 0.5, n)
        g = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3) * box.extents
        return g @ box.rotation_matrix.T + box.center

    from scipy.spatial import cKDTree

    d, _ = cKDTree(samples(b)).query(samples(a))
    return float(d.min())


def test_surface_distance_axis_aligned_exact():
    a = _box("a", (0, 0, 0), (1, 1, 1))
    b = _box("b", (3, 2, 0), (1, 1, 1))
    assert surface_distance(a, b) == pytest.approx(math.hypot(2, 1), abs=1e-9)
    assert surface_distance(a, _box("c", (0.5, 0, 0))) == pytest.approx(0.0, abs=1e-9)


def test_surface_distance_vs_brute_force(rng):
    for _ in range(15):
        a = ObbBox("a", "t", tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(0.2, 1, 3)), tuple(rng.uniform(-1, 1, 3)))
        b = ObbBox("b", "t", tuple(rng.uniform(-1, 1, 3) + [2.5, 0, 0]), tuple(rng.uniform(0.2, 1, 3)), tuple(rng.uniform(-1, 1, 3)))
        d = surface_distance(a, b)
        brute = _brute_distance(a, b)
        # the sampled minimum can only overestimate, by at most a grid cell diagonal
        assert d <= brute + 1e-9
        assert brute - d < 0.1


def test_compare_attributes():
    big = ObbBox("a", "t", (0, 0, 1), (2.0, 1.0, 2.0))
    small = ObbBox("b", "t", (3, 0, 1), (1.0, 0.5, 1.0))
    cmp = compare_attributes(big, small)
    assert cmp["larger_volume"].winner == "a" and cmp["larger_volume"].ratio == pytest.approx(8.0)
    assert compare_attributes(big, big.replace(id="c"))["taller"].winner == "comparable"


def _frame(fid, pose):
    return Frame(fid, "x.png", "x.npy", K, pose, "npy")


def test_plus_ninety_yaw_is_left():
    a = _frame("a", look_at((0, 0, 1), (1, 0, 1)))  # facing +X
    b = _frame("b", look_at((0, 0, 1), (0, 1, 1)))  # facing +Y, turned counterclockwise
    rel = relative_camera_pose(a, b)
    assert rel.yaw_deg == pytest.approx(90.0)
    assert rel.direction == "stationary"
    from spatialforge.qa.synth import rotation_class

    assert rotation_class(rel.yaw_deg, 5.0) == "left"
    assert rotation_class(-rel.yaw_deg, 5.0) == "right"


def test_translation_in_first_camera_frame():
    a = _frame("a", look_at((0, 0, 1), (1, 0, 1)))
    b = _frame("b", look_at((2, 0, 1), (3, 0, 1)))
    rel = relative_camera_pose(a, b)
    assert rel.direction == "forward"
    assert rel.translation_cam == pytest.approx((0.0, 0.0, 2.0))
    c = _frame("c", look_at((0, -1, 1), (1, -1, 1)))  # one meter to a's right
    assert relative_camera_pose(a, c).direction == "right"


def test_camera_frame_examples():
    from spatialforge.scene_model import CameraPose

    ident = CameraPose.identity()
    a, b = _box("a", (-1, 0, 3)), _box("b", (1, 0, 3))
    assert pairwise_relation(ident, a, b) == {"left": pytest.approx(2.0)}
    near, far = _box("n", (0, 0, 2)), _box("f", (0, 0, 4))
    assert "front" in pairwise_relation(ident, near, far)


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord, coord, coord)
def test_relations_match_sign_and_margin_oracle(x1, y1, z1, x2, y2, z2):
    a, b = _box("a", (x1, y1, z1)), _box("b", (x2, y2, z2))
    R, t = POSE.rotation, POSE.translation
    ca, cb = R.T @ (np.array(a.center) - t), R.T @ (np.array(b.center) - t)
    expected = set()
    if abs(cb[0] - ca[0]) > 0.10:
        expected.add("left" if cb[0] > ca[0] else "right")
    if abs(cb[2] - ca[2]) > 0.10:
        expected.add("front" if cb[2] > ca[2] else "behind")
    if abs(z1 - z2) > 0.05:
        expected.add("above" if z1 > z2 else "below")
    assert set(pairwise_relation(POSE, a, b)) == expected


def test_volume_ratio_and_ties():
    unit = ObbBox("a", "t", (0, 0, 0), (1, 1, 1))
    big = ObbBox("b", "t", (5, 0, 0), (2, 2, 2))
    c = compare_attributes(unit, big)
    assert c["larger_volume"].winner == "b" and c["larger_volume"].ratio == pytest.approx(8.0)
    same = compare_attributes(unit, unit.replace(id="c"))
    assert {v.winner for v in same.values()} == {"comparable"}


def test_pitched_slab_taller_by_world_z():
    from spatialforge.geometry import obb_corners

    tilted = ObbBox("a", "t", (0, 0, 1), (2, 1, 0.1), (0.0, math.pi / 2, 0.0))
    upright = ObbBox("b", "t", (3, 0, 0.5), (2, 1, 0.1))
    z_extent = {b.id: np.ptp(obb_corners(b)[:, 2]) for b in (tilted, upright)}
    winner = "a" if z_extent["a"] > z_extent["b"] else "b"
    assert compare_attributes(tilted, upright)["taller"].winner == winner == "a"


def test_graph_edge_bounds_and_oracle(orbit):
    scene, index = orbit
    for frame in scene.frames:
        g = build_frame_graph(scene, index, frame.frame_id)
        ids = sorted(g.nodes)
        expected = set()
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                rel = pairwise_relation(frame.pose, scene.box_by_id[a], scene.box_by_id[b])
                assert len(rel) * 2 <= 6
                for r in rel:
                    expected |= {(a, r, b), (b, INVERSE[r], a)}
        assert {(e.subject, e.relation, e.object) for e in g.edges} == expected


def test_empty_graph(two_plane):
    from spatialforge.pipeline import index_scene
    from spatialforge.scene_model import load_scene

    scene = load_scene(two_plane["hidden"])
    g = build_frame_graph(scene, index_scene(scene), scene.frames[0].frame_id)
    assert g.nodes == {} and g.edges == ()


def test_identical_poses_are_stationary():
    a = _frame("a", POSE)
    rel = relative_camera_pose(a, _frame("b", POSE))
    assert rel.yaw_deg == 0.0 and rel.direction == "stationary"


def test_yaw_matches_relative_rotation_oracle(rng):
    # level cameras: R_a^T R_b is a pure rotation about the camera Y axis, which points down
    for _ in range(200):
        ea, eb = rng.uniform(-5, 5, (2, 3))
        ta = ea + np.append(rng.normal(size=2), 0.0)
        tb = eb + np.append(rng.normal(size=2), 0.0)
        fa, fb = _frame("a", look_at(ea, ta)), _frame("b", look_at(eb, tb))
        rel_R = fa.pose.rotation.T @ fb.pose.rotation
        oracle = -math.degrees(math.atan2(rel_R[0, 2], rel_R[0, 0]))
        got = relative_camera_pose(fa, fb).yaw_deg
        assert abs((got - oracle + 180) % 360 - 180) < 1e-9


def test_multiview_shared_ids(orbit):
    from spatialforge.scene_graph import merge_multiview

    scene, index = orbit
    f = [fr.frame_id for fr in scene.frames]
    same = merge_multiview(scene, index, f[0], f[0])
    assert same.shared_ids == index.visible_objects(f[0]) and same.relative_pose.direction == "stationary"
    for a, b in ((f[0], f[3]), (f[2], f[7])):
        mv = merge_multiview(scene, index, a, b)
        assert mv.shared_ids == index.reverse[a] & index.reverse[b]
