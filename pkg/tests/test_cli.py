from __future__ import annotations

import json
import shutil

import pytest

from spatialforge.cli import EXIT_INPUT, EXIT_OK, main
from spatialforge.config import dump_config, load_config, parse_config, EngineConfig
from spatialforge.qa.records import read_jsonl, write_jsonl


def test_ingest_valid(small_orbit, capsys):
    assert main(["ingest", str(small_orbit)]) == EXIT_OK
    assert "ingested 1, failed 0" in capsys.readouterr().out


def test_ingest_invalid_points_at_field(small_orbit, tmp_path, capsys):
    data = json.loads(small_orbit.read_text())
    data["boxes"][2]["extents"] = [1, 1]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert main(["ingest", str(bad)]) == EXIT_INPUT
    assert "/boxes/2/extents" in capsys.readouterr().out


def test_ingest_directory_with_one_broken(small_orbit, tmp_path, capsys):
    data = json.loads(small_orbit.read_text())
    for i in range(5):
        d = json.loads(json.dumps(data))
        d["scene_id"] = f"s{i}"
        if i == 3:
            d["frames"][0] = dict(d["frames"][0], intrinsics={"fx": 1})
        (tmp_path / f"s{i}.json").write_text(json.dumps(d))
    for sub in ("images", "depth"):
        shutil.copytree(small_orbit.parent / sub, tmp_path / sub)
    assert main(["ingest", str(tmp_path)]) == EXIT_INPUT
    out = capsys.readouterr().out
    assert "ingested 4, failed 1" in out and "s3.json" in out


def test_synthesize_validate_stats(small_orbit, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["synthesize", str(small_orbit), "--out", str(out), "--quota", "sr_vertical=0"]) == EXIT_OK
    recs = list(read_jsonl(out / "qa.jsonl"))
    assert recs and not [r for r in recs if r.subtask == "sr_vertical"]
    assert json.loads((out / "run_report.json").read_text())["cache"] == {"hits": 0, "misses": 4}
    assert main(["validate", str(out / "qa.jsonl"), str(small_orbit)]) == EXIT_OK
    capsys.readouterr()
    assert main(["stats", str(out / "qa.jsonl"), "--json"]) == EXIT_OK
    text = capsys.readouterr().out
    stats = json.loads(text[text.index("{"):])
    assert stats["total"] == len(recs)


def test_validate_reports_perturbed_record(small_orbit, tmp_path, capsys):
    out = tmp_path / "out"
    main(["synthesize", str(small_orbit), "--out", str(out)])
    recs = list(read_jsonl(out / "qa.jsonl"))
    target = next(r for r in recs if r.subtask == "mc_shared_count")
    bad = [r if r is not target else type(r).from_json({**r.to_json(), "answer": "99"}) for r in recs]
    write_jsonl(bad, tmp_path / "bad.jsonl")
    capsys.readouterr()
    assert main(["validate", str(tmp_path / "bad.jsonl"), str(small_orbit)]) == EXIT_INPUT
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("mismatch")]
    assert len(lines) == 1 and target.record_id in lines[0]


def test_validate_empty_corpus(tmp_path, capsys):
    (tmp_path / "qa.jsonl").write_text("")
    assert main(["validate", str(tmp_path / "qa.jsonl")]) == EXIT_OK
    assert "records 0" in capsys.readouterr().out


def test_non_metric_suite_has_no_sm(tmp_path):
    suite = tmp_path / "suite"
    assert main(["gen-synthetic", "--suite", "orbit", "--frames", "4", "--non-metric", "--out", str(suite)]) == EXIT_OK
    out = tmp_path / "out"
    assert main(["synthesize", str(suite), "--out", str(out)]) == EXIT_OK
    recs = list(read_jsonl(out / "qa.jsonl"))
    assert recs and not [r for r in recs if r.task == "SM"]


def test_run_and_lift(tmp_path, lift_manifest):
    suite = tmp_path / "suite"
    main(["gen-synthetic", "--suite", "orbit", "--frames", "4", "--out", str(suite)])
    out = tmp_path / "run"
    assert main(["run", str(suite), "--out", str(out), "--seed", "3", "--workers", "2"]) == EXIT_OK
    assert json.loads((out / "validation.json").read_text())["passed"]
    lifted = tmp_path / "lifted"
    assert main(["lift", str(lift_manifest), "--out", str(lifted)]) == EXIT_OK
    assert main(["ingest", str(lifted)]) == EXIT_OK


def test_missing_input_and_bad_config(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.json")]) == EXIT_INPUT
    cfg = tmp_path / "c.yaml"
    cfg.write_text("extraction: {tau: 2.0}\n")
    assert main(["ingest", str(tmp_path), "--config", str(cfg)]) == EXIT_INPUT


def test_config_round_trip_and_precedence(tmp_path):
    cfg = EngineConfig().updated({"seed": 5, "extraction.tau": 0.3, "qa.quotas": {"sr_vertical": 2}})
    assert parse_config(dump_config(cfg)) == cfg
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    env = {"SPATIALFORGE_SEED": "7", "SPATIALFORGE_PARALLEL__WORKERS": "3"}
    merged = load_config(path, {"seed": 9}, env)
    assert merged.seed == 9 and merged.parallel.workers == 3 and merged.extraction.tau == 0.3
    assert load_config(path, None, env).seed == 7
    with pytest.raises(ValueError):
        EngineConfig().updated({"nope.x": 1})
