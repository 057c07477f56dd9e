"""Acceptance criteria, one test each; a pass/fail line per criterion is printed at the end of the run.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import time
from collections import Counter

import numpy as np
import pytest

import oracles
from spatialforge.attributes import filter_and_extract, stable_seed
from spatialforge.config import EngineConfig
from spatialforge.geometry import backproject_pixels, point_in_obb, project_obb, project_points, world_to_camera
from spatialforge.lifting import convex_hull_2d, gravity_box_iou, min_area_rectangle
from spatialforge.pipeline import (
    Pipeline,
    StageSpec,
    index_scene,
    run,
    run_lift,
    run_qa,
    stage_extract,
    stage_load,
    validate_stages,
)
from spatialforge.qa.oracle import validate_records
from spatialforge.qa.records import read_jsonl
from spatialforge.qa.sampling import sample_view_pairs
from spatialforge.qa.templates import SUBTASKS
from spatialforge.scene_model import CameraIntrinsics, CameraPose, ObbBox, load_depth, load_scene
from spatialforge.stats import compute_stats, count_structure
from spatialforge.synthetic import gen_synthetic, orbit_spec, qa_suite_specs, write_suite

RESULTS: list[tuple[int, str, str]] = []


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.append((n, "PASS" if ok else "FAIL", detail))
    assert ok, f"criterion {n}: {detail}"


def test_01_geometry_round_trip():
    rng = np.random.default_rng(1)
    K = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        pose = CameraPose(R, rng.uniform(-10, 10, 3))
        u = rng.uniform(0, K.width, 100)
        v = rng.uniform(0, K.height, 100)
        d = rng.uniform(0.1, 20.0, 100)
        uv, _ = project_points(K, world_to_camera(pose, backproject_pixels(K, pose, u, v, d)))
        worst = max(worst, float(np.abs(uv - np.stack([u, v], 1)).max()))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-6 and elapsed < 5.0, f"max error {worst:.2e} px over 1e5 triples in {elapsed:.2f} s")


def test_02_containment_oracle():
    rng = np.random.default_rng(2)
    agree = 0
    for _ in range(10_000):
        box = ObbBox("b", "t", tuple(rng.uniform(-3, 3, 3)), tuple(rng.uniform(0.05, 2, 3)),
                     tuple(rng.uniform(-math.pi, math.pi, 3) * [0.5, 0.5, 1]))
        p = np.asarray(box.center) + rng.uniform(-1.2, 1.2, 3)
        agree += point_in_obb(box, p) == oracles.contains(box, p)
    record(2, agree == 10_000, f"{agree}/10000 agree")


def test_03_occlusion_filter(two_plane):
    verdicts, details, ok = [], [], True
    for name in ("hidden", "open", "half"):
        scene = load_scene(two_plane[name])
        frame = scene.frames[0]
        depth = load_depth(scene, frame)
        (rec,) = filter_and_extract(scene, frame, depth, EngineConfig().extraction)
        region = project_obb(frame.intrinsics, frame.pose, scene.boxes[0])
        ref, n = oracles.occupancy(frame, depth, scene.boxes[0], region, stride=1)
        ok &= abs(rec.occupancy - ref) <= 1.0 / n
        verdicts.append(rec.visible)
        details.append(f"{name} {rec.occupancy:.4f} vs {ref:.4f}")
    ok &= verdicts == [False, True, True]
    record(3, ok, f"{', '.join(details)}; visible {verdicts}")


@pytest.fixture(scope="module")
def corpus(qa_suite, tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    t0 = time.perf_counter()
    result, _ = run_qa(qa_suite, EngineConfig(), out_dir=out)
    return result, time.perf_counter() - t0


def test_04_oracle_sweep(qa_suite, corpus):
    result, gen_time = corpus
    t0 = time.perf_counter()
    recs = list(read_jsonl(result.path))
    by_scene: dict[str, list] = {}
    for r in recs:
        by_scene.setdefault(r.provenance.scene_id, []).append(r)
    report = None
    for path in qa_suite:
        scene = load_scene(path)
        report = validate_records(by_scene[scene.scene_id], scene, index_scene(scene), EngineConfig(), report)
    elapsed = gen_time + time.perf_counter() - t0
    present = {r.subtask for r in recs}
    ok = (
        len(recs) >= 2000
        and present == set(SUBTASKS)
        and len(present) >= 19
        and report.passed
        and elapsed < 120
    )
    record(
        4, ok,
        f"{len(recs)} records, {len(present)}/{len(SUBTASKS)} sub-tasks, answers {report.answer_ok}/{report.total}, "
        f"anchors {report.anchors_ok}/{report.anchors_total}, choice {report.choice_ok}/{report.choice_total}, "
        f"{elapsed:.1f} s",
    )


def test_05_metric_gate(qa_suite, corpus, tmp_path):
    result, _ = corpus
    paths = write_suite(tmp_path / "nm", qa_suite_specs(metric=False))
    nm, _ = run_qa(paths, EngineConfig(), out_dir=tmp_path / "out")
    metric = Counter(r.subtask for r in result.records if r.task != "SM")
    non_metric = Counter(r.subtask for r in nm.records if r.task != "SM")
    sm = sum(r.task == "SM" for r in nm.records)
    record(5, sm == 0 and metric == non_metric,
           f"{sm} SM records without metric flags; other counts {sum(non_metric.values())} vs {sum(metric.values())}")


def test_06_view_pair_contract(orbit):
    scene, index = orbit
    assert len(scene.frames) == 10
    expected = []
    for i in range(10):
        for j in range(i + 1, 10):
            a, b = scene.frames[i], scene.frames[j]
            shared = len(index.reverse[a.frame_id] & index.reverse[b.frame_id])
            ha = math.atan2(a.pose.rotation[1, 2], a.pose.rotation[0, 2])
            hb = math.atan2(b.pose.rotation[1, 2], b.pose.rotation[0, 2])
            dyaw = (math.degrees(hb - ha) + 180.0) % 360.0 - 180.0
            if shared >= 1 and abs(dyaw) >= 15.0:
                expected.append((a.frame_id, b.frame_id))
    random.Random(stable_seed(0, scene.scene_id, "view_pairs")).shuffle(expected)
    got = [(p.frame_a, p.frame_b) for p in sample_view_pairs(scene, index, 1, 1000, 15.0, 0)]
    record(6, got == expected, f"{len(got)} pairs, oracle {len(expected)}, identical order {got == expected}")


def test_07_lifting(lift_manifest, tmp_path):
    truth = load_scene(lift_manifest)
    (out,), _ = run_lift([lift_manifest], EngineConfig(), tmp_path)
    ious = [max(gravity_box_iou(i.fitted_box, t) for i in out.instances) for t in truth.boxes]
    lifted = load_scene(out.path)
    index = index_scene(lifted)
    ok = len(out.instances) == 3 and min(ious) >= 0.7 and len(lifted.boxes) == 3
    record(7, ok, f"{len(out.instances)} instances, IoU {[round(x, 3) for x in ious]}, "
                  f"re-ingested with {sum(len(v) for v in index.reverse.values())} visible object-frames")


def test_08_calipers_optimality():
    rng = np.random.default_rng(8)
    angles = np.radians(np.arange(0.0, 90.0, 0.1))
    c, s = np.cos(angles), np.sin(angles)
    worst = -math.inf
    for _ in range(1000):
        pts = rng.normal(size=(int(rng.integers(3, 50)), 2)) * rng.uniform(0.1, 5, 2)
        hull = convex_hull_2d(pts)
        x = hull[:, 0][None, :] * c[:, None] + hull[:, 1][None, :] * s[:, None]
        y = -hull[:, 0][None, :] * s[:, None] + hull[:, 1][None, :] * c[:, None]
        sweep = ((x.max(1) - x.min(1)) * (y.max(1) - y.min(1))).min()
        worst = max(worst, min_area_rectangle(hull).area - sweep)
    record(8, worst <= 1e-9, f"max(calipers - sweep) = {worst:.3e} over 1000 hulls")


def test_09_pipeline_determinism(qa_suite, tmp_path):
    outputs = set()
    for workers in (1, 2, 4):
        for cap in (1, 4, 64):
            cfg = EngineConfig().updated({"parallel.workers": workers, "parallel.queue_capacity": cap})
            res, _ = run_qa(qa_suite, cfg, out_dir=tmp_path / f"w{workers}c{cap}")
            outputs.add(hashlib.sha256(res.path.read_bytes()).hexdigest())
    cache = tmp_path / "cache"
    cold, _ = run_qa(qa_suite, EngineConfig(), cache, tmp_path / "cold")
    warm, rep = run_qa(qa_suite, EngineConfig(), cache, tmp_path / "warm")
    outputs.add(hashlib.sha256(cold.path.read_bytes()).hexdigest())
    outputs.add(hashlib.sha256(warm.path.read_bytes()).hexdigest())
    recomputed = rep.stage("extract").cache_misses
    record(9, len(outputs) == 1 and recomputed == 0,
           f"{len(outputs)} distinct output(s) over 9 configs + cold/warm; warm extract recomputations {recomputed}")


def _extract_pipeline(workers: int) -> Pipeline:
    cfg = EngineConfig().updated({"parallel.executor": "process"})
    stages = (
        StageSpec("load", "manifest_path", "frame_task", stage_load),
        StageSpec("extract", "frame_task", "frame_attrs", stage_extract, workers=workers, upstream="load"),
    )
    return Pipeline("extract", stages, validate_stages(stages), cfg)


def _cores() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def test_10_pipelining_speedup(tmp_path):
    manifest = gen_synthetic(orbit_spec(200, width=320, height=240, fx=280.0, fy=280.0), tmp_path / "w200")
    times = {}
    for workers in (1, 4):
        t0 = time.perf_counter()
        res = run(_extract_pipeline(workers), [str(manifest)])
        times[workers] = time.perf_counter() - t0
        assert res.report.stage("extract").items_out == 200
    ratio = times[4] / times[1]
    cores = _cores()
    detail = f"4 workers {times[4]:.2f} s vs 1 worker {times[1]:.2f} s, ratio {ratio:.2f} on {cores} core(s)"
    if cores < 4:
        RESULTS.append((10, "SKIP", detail + "; needs >= 4 cores"))
        pytest.skip(detail + "; needs >= 4 cores")
    record(10, ratio < 0.6, detail)


def test_11_generation_determinism(qa_suite, corpus, tmp_path):
    first, _ = corpus
    again, _ = run_qa(qa_suite, EngineConfig(), out_dir=tmp_path / "again")
    same = first.path.read_bytes() == again.path.read_bytes()
    other, _ = run_qa(qa_suite, EngineConfig(seed=1), out_dir=tmp_path / "seed1")
    ids_a = {r.record_id for r in first.records}
    ids_b = {r.record_id for r in other.records}
    changed = 1.0 - len(ids_a & ids_b) / len(ids_a)
    structure = count_structure(compute_stats(first.records)) == count_structure(compute_stats(other.records))
    record(11, same and changed >= 0.9 and structure,
           f"byte-identical {same}; {changed:.1%} of ids changed with a new seed; count structure equal {structure}")
