from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spatialforge.geometry import (
    FrustumClass,
    OutsideFrustumError,
    backproject_pixel,
    backproject_pixels,
    footprint_polygon,
    frustum_test,
    horizontal_extents,
    point_in_obb,
    points_in_obb,
    project_obb,
    project_point,
    world_to_camera,
    world_z_extent,
)
from spatialforge.scene_model import CameraIntrinsics, CameraPose, ObbBox
from spatialforge.synthetic import look_at

K = CameraIntrinsics(100.0, 100.0, 80.0, 60.0, 160, 120)


def random_box(rng) -> ObbBox:
    return ObbBox(
        "b", "thing",
        tuple(rng.uniform(-2, 2, 3)),
        tuple(rng.uniform(0.1, 2, 3)),
        tuple(rng.uniform(-math.pi, math.pi, 3) * [0.5, 0.5, 1]),
    )


def test_containment_matches_oracle(rng):
    for _ in range(2000):
        box = random_box(rng)
        p = np.asarray(box.center) + rng.uniform(-1.5, 1.5, 3)
        assert point_in_obb(box, p) == oracles.contains(box, p)


def test_backproject_then_project(rng):
    pose = look_at((1.0, -3.0, 1.5), (0.0, 0.0, 0.5))
    u = rng.uniform(0, K.width, 500)
    v = rng.uniform(0, K.height, 500)
    d = rng.uniform(0.2, 10, 500)
    pts = backproject_pixels(K, pose, u, v, d)
    for i in range(0, 500, 50):
        assert np.allclose(pts[i], backproject_pixel(K, pose, u[i], v[i], d[i]))
        pu, pv, z = project_point(K, world_to_camera(pose, pts[i]))
        assert abs(pu - u[i]) < 1e-9 and abs(pv - v[i]) < 1e-9 and abs(z - d[i]) < 1e-9


def test_behind_camera_is_none():
    assert project_point(K, (0.0, 0.0, -1.0)) is None
    with pytest.raises(ValueError):
        backproject_pixel(K, CameraPose.identity(), 1, 1, 0.0)


def test_camera_axes_convention():
    # +X right and +Y down in the image
    u, v, _ = project_point(K, (1.0, 0.5, 2.0))
    assert u > K.cx and v > K.cy


def test_frustum_classes():
    pose = CameraPose.identity()
    inside = ObbBox("a", "t", (0, 0, 5), (1, 1, 1))
    partial = ObbBox("b", "t", (4.0, 0, 5), (1, 1, 1))
    outside = ObbBox("c", "t", (0, 0, -5), (1, 1, 1))
    wide = ObbBox("d", "t", (0, 0, 2), (20, 20, 0.5))  # no corner lands in the image
    assert frustum_test(K, pose, inside) is FrustumClass.INSIDE
    assert frustum_test(K, pose, partial) is FrustumClass.PARTIAL
    assert frustum_test(K, pose, outside) is FrustumClass.OUTSIDE
    assert frustum_test(K, pose, wide) is FrustumClass.PARTIAL
    b2 = project_obb(K, pose, partial)
    assert b2.clipped and b2.max_u == K.width
    with pytest.raises(OutsideFrustumError):
        project_obb(K, pose, outside)


def test_projected_box_tight_for_axis_aligned():
    box = ObbBox("a", "t", (0, 0, 5), (1, 1, 1))
    b2 = project_obb(K, CameraPose.identity(), box)
    # front face at z = 4.5 dominates
    assert math.isclose(b2.min_u, 80 - 100 * 0.5 / 4.5)
    assert math.isclose(b2.max_v, 60 + 100 * 0.5 / 4.5)
    assert not b2.clipped and b2.visible_corner_count == 8


def test_height_and_horizontal_extents():
    box = ObbBox("a", "t", (0, 0, 1), (1.0, 0.5, 2.0), (0.0, 0.0, 0.7))
    assert math.isclose(world_z_extent(box), 2.0)
    assert np.allclose(horizontal_extents(box), (1.0, 0.5))
    assert footprint_polygon(box).shape == (4, 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_box_center_and_corners_inside(seed):
    box = random_box(np.random.default_rng(seed))
    from spatialforge.geometry import obb_corners

    assert points_in_obb(box, np.vstack([box.center, obb_corners(box)])).all()


K640 = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def test_cube_corners():
    from spatialforge.geometry import obb_corners

    cube = ObbBox("c", "t", (0, 0, 0), (1, 1, 1))
    corners = {tuple(c) for c in obb_corners(cube)}
    assert corners == {(x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)}
    moved = obb_corners(cube.replace(center=(1.0, 2.0, 3.0)))
    assert np.array_equal(moved, obb_corners(cube) + [1.0, 2.0, 3.0])


def test_rotated_corners_match_oracle(rng):
    import itertools

    from spatialforge.geometry import obb_corners

    for _ in range(50):
        box = random_box(rng)
        R = oracles.rotation(*box.rotation)
        half = np.asarray(box.extents) / 2
        expected = {tuple(np.round(R @ (half * s) + box.center, 9)) for s in itertools.product((-1, 1), repeat=3)}
        assert {tuple(np.round(c, 9)) for c in obb_corners(box)} == expected
    slab = ObbBox("s", "t", (0, 0, 0), (2, 1, 1), (0, 0, math.pi / 2))
    assert np.allclose(np.abs(obb_corners(slab)).max(axis=0), [0.5, 1.0, 0.5])


def test_world_to_camera_examples(rng):
    assert np.allclose(world_to_camera(CameraPose.identity(), (1, 2, 3)), (1, 2, 3))
    moved = CameraPose(np.eye(3), np.array([1.0, 0, 0]))
    assert np.allclose(world_to_camera(moved, (1, 0, 5)), (0, 0, 5))
    for _ in range(100):
        pose = look_at(rng.uniform(-5, 5, 3), rng.uniform(-1, 1, 3))
        p = rng.uniform(-5, 5, 3)
        T = np.linalg.inv(pose.matrix())
        assert np.abs(world_to_camera(pose, p) - (T @ np.append(p, 1))[:3]).max() < 1e-9


def test_pinhole_examples():
    assert project_point(K640, (0, 0, 2)) == (320.0, 240.0, 2.0)
    assert project_point(K640, (0.1, 0, 1)) == pytest.approx((370.0, 240.0, 1.0))
    assert np.allclose(backproject_pixel(K640, CameraPose.identity(), 320, 240, 3.0), (0, 0, 3))
    assert np.allclose(backproject_pixel(K640, CameraPose.identity(), 370, 240, 1.0), (0.1, 0, 1))


def test_corner_just_outside():
    box = ObbBox("a", "t", (0, 0, 0), (1, 1, 1), (0.1, 0.2, 0.3))
    from spatialforge.geometry import obb_corners

    corner = obb_corners(box)[0]
    outward = (corner - np.asarray(box.center)) / np.linalg.norm(corner - np.asarray(box.center))
    assert point_in_obb(box, box.center)
    assert not point_in_obb(box, corner + 1e-3 * outward)


def _oracle_corners(pose, box):
    """Project every corner independently with the homogeneous inverse pose."""
    import itertools

    T = np.linalg.inv(pose.matrix())
    R = oracles.rotation(*box.rotation)
    out = []
    for s in itertools.product((-1, 1), repeat=3):
        w = R @ (np.asarray(box.extents) / 2 * s) + box.center
        x, y, z = (T @ np.append(w, 1))[:3]
        out.append((K.fx * x / z + K.cx, K.fy * y / z + K.cy, z))
    return np.array(out)


def test_projection_and_frustum_vs_corner_oracle(rng):
    pose = look_at((0.0, -4.0, 1.0), (0.0, 0.0, 0.5))
    seen = set()
    for _ in range(300):
        box = ObbBox("b", "t", tuple(rng.uniform([-4, -2, -1], [4, 4, 2])), tuple(rng.uniform(0.2, 1.5, 3)),
                     (0.0, 0.0, float(rng.uniform(-3, 3))))
        c = _oracle_corners(pose, box)
        front = c[:, 2] > 0
        in_img = front & (c[:, 0] >= 0) & (c[:, 0] < K.width) & (c[:, 1] >= 0) & (c[:, 1] < K.height)
        cls = frustum_test(K, pose, box)
        seen.add(cls)
        if in_img.all():
            assert cls is FrustumClass.INSIDE
        elif in_img.any():
            assert cls is FrustumClass.PARTIAL
        if cls is FrustumClass.OUTSIDE:
            continue
        lo, hi = c[front, :2].min(axis=0), c[front, :2].max(axis=0)
        b2 = project_obb(K, pose, box)
        assert b2.min_u == pytest.approx(np.clip(lo[0], 0, K.width), abs=1e-9)
        assert b2.max_v == pytest.approx(np.clip(hi[1], 0, K.height), abs=1e-9)
        assert b2.clipped == (not in_img.all())
    assert seen == set(FrustumClass)


def test_symmetric_projection_and_behind_corner():
    b2 = project_obb(K640, CameraPose.identity(), ObbBox("c", "t", (0, 0, 5), (1, 1, 1)))
    assert (b2.min_u + b2.max_u) / 2 == pytest.approx(320) and (b2.min_v + b2.max_v) / 2 == pytest.approx(240)
    # long box reaching behind the camera
    long = ObbBox("l", "t", (0, 0, 1.0), (0.5, 0.5, 4.0))
    b2 = project_obb(K640, CameraPose.identity(), long)
    assert b2.clipped and b2.visible_corner_count < 8
