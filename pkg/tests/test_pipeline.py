from __future__ import annotations

import json

import pytest

from spatialforge.config import EngineConfig
from spatialforge.pipeline import (
    ContentCache,
    ErrorCeilingExceeded,
    Pipeline,
    PipelineBuildError,
    StageSpec,
    build_pipeline,
    run,
    run_lift,
    run_qa,
    validate_stages,
)


def test_stage_counts():
    assert build_pipeline(EngineConfig(), "qa").order == (
        "load", "extract", "index", "graph", "sample-pairs", "synthesize", "write",
    )
    assert len(build_pipeline(EngineConfig(), "lift").stages) == 5


def test_worker_config_applies_to_parallel_stages():
    cfg = EngineConfig().updated({"parallel.workers": 3, "parallel.stage_workers": {"graph": 2}})
    pipe = build_pipeline(cfg)
    assert pipe.stage("extract").workers == 3 and pipe.stage("synthesize").workers == 3
    assert pipe.stage("graph").workers == 2 and pipe.stage("index").workers == 1


def _ident(x, ctx):
    return [x]


@pytest.mark.parametrize(
    "stages, message",
    [
        ([], "zero stages"),
        ([StageSpec("a", "int", "int", _ident), StageSpec("a", "int", "int", _ident)], "duplicate"),
        ([StageSpec("a", "int", "int", _ident), StageSpec("b", "str", "int", _ident, upstream="a")], "kind mismatch"),
        ([StageSpec("a", "int", "int", _ident, upstream="b"), StageSpec("b", "int", "int", _ident, upstream="a")], "cycle"),
        ([StageSpec("a", "int", "int", _ident, upstream="zzz")], "unknown stage"),
    ],
)
def test_build_errors(stages, message):
    with pytest.raises(PipelineBuildError, match=message):
        validate_stages(stages)


def test_miswired_qa_pipeline_rejected():
    with pytest.raises(PipelineBuildError, match="kind mismatch"):
        build_pipeline(EngineConfig(), "qa", wiring={"graph": "extract"})
    with pytest.raises(PipelineBuildError):
        build_pipeline(EngineConfig(), "nope")
    with pytest.raises(PipelineBuildError):
        StageSpec("a", "int", "int", _ident, workers=0)


def _fragile(x, ctx):
    if x == 13:
        raise RuntimeError("bad item")
    return [x * 2]


def _toy(workers=3, capacity=2, ceiling=0.10):
    cfg = EngineConfig().updated({"parallel.error_ceiling": ceiling})
    stages = (
        StageSpec("double", "int", "int", _fragile, workers=workers, queue_capacity=capacity),
        StageSpec("keep", "int", "int", _ident, workers=2, queue_capacity=capacity, upstream="double"),
    )
    return Pipeline("toy", stages, validate_stages(stages), cfg)


def test_one_bad_item_is_quarantined():
    res = run(_toy(), range(50))
    assert sorted(res.outputs["keep"]) == sorted(2 * x for x in range(50) if x != 13)
    rep = res.report.stage("double")
    assert (rep.items_in, rep.items_out, rep.errors) == (50, 49, 1)
    assert res.report.errors[0].stage_id == "double" and "bad item" in res.report.errors[0].error
    assert res.report.stage("keep").items_in == 49


def test_error_ceiling():
    with pytest.raises(ErrorCeilingExceeded) as err:
        run(_toy(ceiling=0.01), range(50))
    assert err.value.report.stage("double").errors == 1


def test_backpressure_bounds_queue():
    res = run(_toy(workers=1, capacity=1), range(30))
    assert all(s.queue_high_water <= 1 for s in res.report.stages)
    assert len(res.outputs["keep"]) == 29


# content cache ----------------------------------------------------------------------


def test_cache_put_get_and_corruption(tmp_path):
    cache = ContentCache(tmp_path)
    key = ContentCache.key("extract", "in", "cfg")
    assert cache.get(key) is None and key not in cache
    cache.put(key, b"payload")
    assert cache.get(key) == b"payload" and key in cache
    assert ContentCache.key("extract", "in", "cfg", "other-version") != key
    path = cache.path(key)
    path.write_bytes(path.read_bytes()[:-3] + b"xyz")
    assert cache.get(key) is None
    assert not path.exists()


# QA pipeline ---------------------------------------------------------------------------


def _qa_bytes(manifests, tmp_path, name, **overrides):
    cfg = EngineConfig().updated(overrides)
    out, report = run_qa(manifests, cfg, out_dir=tmp_path / name)
    return out.path.read_bytes(), report


def test_output_independent_of_workers(small_orbit, tmp_path):
    ref, _ = _qa_bytes([small_orbit], tmp_path, "ref")
    for workers, cap in ((2, 1), (4, 64)):
        got, report = _qa_bytes(
            [small_orbit], tmp_path, f"w{workers}", **{"parallel.workers": workers, "parallel.queue_capacity": cap}
        )
        assert got == ref
        assert report.stage("extract").workers == workers


def test_process_executor_matches(small_orbit, tmp_path):
    ref, _ = _qa_bytes([small_orbit], tmp_path, "ref")
    got, _ = _qa_bytes([small_orbit], tmp_path, "proc", **{"parallel.workers": 2, "parallel.executor": "process"})
    assert got == ref


def test_warm_cache_skips_extraction(small_orbit, tmp_path):
    cache_dir = tmp_path / "cache"
    cold, rep_cold = run_qa([small_orbit], EngineConfig(), cache_dir, tmp_path / "cold")
    warm, rep_warm = run_qa([small_orbit], EngineConfig(), cache_dir, tmp_path / "warm")
    assert cold.path.read_bytes() == warm.path.read_bytes()
    assert rep_cold.stage("extract").cache_misses == 4
    assert rep_warm.stage("extract").cache_misses == 0 and rep_warm.stage("extract").cache_hits == 4
    # an extraction setting change invalidates the entries
    _, rep_tau = run_qa([small_orbit], EngineConfig().updated({"extraction.tau": 0.3}), cache_dir, tmp_path / "tau")
    assert rep_tau.stage("extract").cache_hits == 0


def test_item_conservation(small_orbit, tmp_path):
    _, report = run_qa([small_orbit], EngineConfig(), out_dir=tmp_path)
    stages = {s.stage_id: s for s in report.stages}
    assert stages["load"].emitted == stages["extract"].items_in == 4
    for s in report.stages:
        assert s.items_in == s.items_out + s.errors
    assert stages["synthesize"].emitted == stages["write"].items_in
    body = report.to_json()
    assert set(body) == {"stages", "cache", "wall_ms", "errors"} and "total" in body["wall_ms"]
    json.dumps(body)


def test_bad_manifest_recorded(small_orbit, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    cfg = EngineConfig().updated({"parallel.error_ceiling": 0.5})
    out, report = run_qa([small_orbit, bad], cfg, out_dir=tmp_path / "o")
    assert report.stage("load").errors == 1 and out.records
    with pytest.raises(ErrorCeilingExceeded):
        run_qa([small_orbit, bad], EngineConfig(), out_dir=tmp_path / "o2")


def test_lift_pipeline(lift_manifest, tmp_path):
    outs, report = run_lift([lift_manifest], EngineConfig(), tmp_path)
    (out,) = outs
    assert len(out.instances) == 3 and out.path.exists()
    assert report.stage("backproject").items_in == 8


def _sequential_bytes(manifests, cfg, path):
    from spatialforge.pipeline import index_scene
    from spatialforge.qa.records import write_jsonl
    from spatialforge.qa.synth import synthesize_scene
    from spatialforge.scene_model import load_scene

    records = []
    for m in manifests:
        scene = load_scene(m)
        records.extend(synthesize_scene(scene, index_scene(scene, cfg), cfg))
    write_jsonl(records, path)
    return path.read_bytes()


def test_degenerate_pipelining_equals_sequential(small_orbit, tmp_path):
    cfg = EngineConfig().updated({"parallel.workers": 1, "parallel.queue_capacity": 1})
    out, _ = run_qa([small_orbit], cfg, out_dir=tmp_path / "p")
    assert out.path.read_bytes() == _sequential_bytes([small_orbit], cfg, tmp_path / "seq.jsonl")


def test_hundred_frames_four_workers_equal_sequential(tmp_path):
    from spatialforge.synthetic import gen_synthetic, orbit_spec

    manifest = gen_synthetic(orbit_spec(100, width=96, height=72, fx=84.0, fy=84.0), tmp_path / "big")
    cfg = EngineConfig().updated({"parallel.workers": 4, "pairs.max_pairs": 16})
    out, report = run_qa([manifest], cfg, out_dir=tmp_path / "p")
    assert report.stage("extract").items_in == 100
    assert out.path.read_bytes() == _sequential_bytes([manifest], cfg, tmp_path / "seq.jsonl")
