"""Slow, explicit reference computations shared by the tests."""

from __future__ import annotations

import math

import numpy as np


def rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def contains(box, p) -> bool:
    T = np.eye(4)
    T[:3, :3] = rotation(*box.rotation)
    T[:3, 3] = box.center
    local = np.linalg.inv(T) @ np.append(np.asarray(p, float), 1.0)
    return all(abs(local[i]) <= box.extents[i] / 2 + 1e-9 for i in range(3))


def occupancy(frame, depth, box, region, stride: int = 1) -> tuple[float, int]:
    """Pixel-by-pixel occupancy ratio over the region; returns (ratio, #valid pixels)."""
    K, pose = frame.intrinsics, frame.pose
    u0 = max(0, math.ceil(region.min_u))
    v0 = max(0, math.ceil(region.min_v))
    u1 = min(K.width - 1, math.floor(region.max_u))
    v1 = min(K.height - 1, math.floor(region.max_v))
    inside = valid = 0
    for v in range(v0, v1 + 1, stride):
        for u in range(u0, u1 + 1, stride):
            d = float(depth.values[v, u])
            if not depth.valid[v, u]:
                continue
            valid += 1
            p_cam = np.array([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d])
            if contains(box, pose.rotation @ p_cam + pose.translation):
                inside += 1
    return (inside / valid if valid else 0.0), valid
