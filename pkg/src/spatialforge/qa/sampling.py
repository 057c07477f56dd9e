"""View-pair sampling for multi-view questions."""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import combinations

from ..attributes import ObjectFrameIndex, stable_seed
from ..scene_graph import RelativePose, relative_camera_pose
from ..scene_model import Scene


@dataclass(frozen=True)
class ViewPair:
    frame_a: str
    frame_b: str
    shared_count: int
    pose_delta: RelativePose


def candidate_pairs(scene: Scene, index: ObjectFrameIndex, k: int = 1, min_yaw_delta: float = 15.0) -> list[ViewPair]:
    """All frame pairs (scene order, a before b) passing the overlap and diversity gates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for fa, fb in combinations(scene.frames, 2):
        shared = len(index.visible_objects(fa.frame_id) & index.visible_objects(fb.frame_id))
        if shared < k:
            continue
        delta = relative_camera_pose(fa, fb)
        if abs(delta.yaw_deg) < min_yaw_delta:
            continue
        out.append(ViewPair(fa.frame_id, fb.frame_id, shared, delta))
    return out


def sample_view_pairs(
    scene: Scene,
    index: ObjectFrameIndex,
    k: int = 1,
    max_pairs: int = 64,
    min_yaw_delta: float = 15.0,
    rng_seed: int = 0,
) -> list[ViewPair]:
    pairs = candidate_pairs(scene, index, k, min_yaw_delta)
    random.Random(stable_seed(rng_seed, scene.scene_id, "view_pairs")).shuffle(pairs)
    return pairs[:max_pairs]
