"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import pydantic
import yaml

from .config import EngineConfig, load_config
from .pipeline import ContentCache, ErrorCeilingExceeded, PipelineBuildError, index_scene, run_lift, run_qa
from .qa.oracle import UnknownTemplateError, ValidationReport, validate_records
from .qa.records import read_jsonl, write_jsonl
from .scene_model import ManifestError, load_scene, rebase_scene, save_scene
from .stats import compute_stats, format_table
from . import synthetic

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("spatialforge")


REPORT_FILES = {"run_report.json", "lift_report.json", "stats.json", "validation.json"}


class InputError(Exception):
    pass


def _manifests(paths: Sequence[str]) -> list[Path]:
    """Expand directories into the manifests they hold (``*.json`` and ``*/scene.json``), skipping reports."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            found = {*p.glob("*.json"), *p.glob("*/scene.json")}
            out.extend(sorted((f for f in found if f.name not in REPORT_FILES), key=lambda x: x.as_posix()))
        elif p.exists():
            out.append(p)
        else:
            raise InputError(f"{p}: no such file or directory")
    return out


def _config(args) -> EngineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["parallel.workers"] = args.workers
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides, os.environ)


def _out_dir(cfg: EngineConfig, default: str = ".") -> Path:
    return Path(cfg.out_dir or default)


def _cache(cfg: EngineConfig) -> ContentCache | None:
    return ContentCache(cfg.cache_dir) if cfg.cache_dir else None


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_ingest(args, cfg: EngineConfig) -> int:
    ok = failed = 0
    for path in _manifests(args.manifests):
        try:
            scene = load_scene(path)
        except ManifestError as exc:
            failed += 1
            print(f"error {path}: {exc}")
            continue
        except (OSError, ValueError) as exc:
            failed += 1
            print(f"error {path}: {exc}")
            continue
        ok += 1
        print(f"ok {path}: scene {scene.scene_id}, {len(scene.frames)} frames, {len(scene.boxes)} boxes")
        if cfg.out_dir:
            dest = Path(cfg.out_dir) / scene.scene_id / "scene.json"
            dest.parent.mkdir(parents=True, exist_ok=True)
            save_scene(rebase_scene(scene, dest.parent), dest)
    print(f"ingested {ok}, failed {failed}")
    return EXIT_OK if failed == 0 else EXIT_INPUT


def _load_all(paths: Sequence[str]):
    scenes = {}
    for path in _manifests(paths):
        scene = load_scene(path)
        scenes[scene.scene_id] = scene
    return scenes


def cmd_synthesize(args, cfg: EngineConfig) -> int:
    if args.marked:
        cfg = cfg.updated({"qa.render_marked": True})
    for q in args.quota or []:
        name, _, n = q.partition("=")
        try:
            cfg = cfg.updated({"qa.quotas": {**cfg.qa.quotas, name: int(n)}})
        except ValueError as exc:
            raise InputError(f"bad --quota {q!r}: {exc}") from None
    manifests = _manifests(args.manifests)
    for m in manifests:
        load_scene(m)  # report manifest problems as input errors before the run
    out = _out_dir(cfg)
    result, report = run_qa(manifests, cfg, cfg.cache_dir, out)
    if result.path is None:
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl([], out / "qa.jsonl")
    _write_json(out / "run_report.json", report.to_json())
    print(f"wrote {len(result.records)} records to {out / 'qa.jsonl'}")
    return EXIT_OK


def cmd_lift(args, cfg: EngineConfig) -> int:
    if args.detections:
        cfg = cfg.updated({"adapters.detect": "file", "adapters.detect_path": args.detections})
    manifests = _manifests(args.manifests)
    outs, report = run_lift(manifests, cfg, cfg.out_dir)
    for o in outs:
        print(f"lifted {o.scene.scene_id}: {len(o.instances)} instances -> {o.path}")
    if cfg.out_dir:
        _write_json(Path(cfg.out_dir) / "lift_report.json", report.to_json())
    if len(outs) < len(manifests):
        for e in report.errors:
            print(f"error {e.stage_id} {e.item}: {e.error}")
        return EXIT_INPUT
    return EXIT_OK


def validate_corpus(qa_path: str | Path, scenes: dict, cfg: EngineConfig) -> ValidationReport:
    records = list(read_jsonl(qa_path))
    report = ValidationReport()
    cache = _cache(cfg)
    by_scene: dict[str, list] = {}
    for rec in records:
        by_scene.setdefault(rec.provenance.scene_id, []).append(rec)
    for sid in sorted(by_scene):
        if sid not in scenes:
            raise InputError(f"records reference scene {sid!r}, which was not given")
        scene = scenes[sid]
        validate_records(by_scene[sid], scene, index_scene(scene, cfg, cache), cfg, report)
    return report


def cmd_validate(args, cfg: EngineConfig) -> int:
    report = validate_corpus(args.qa, _load_all(args.manifests), cfg)
    data = report.to_json()
    if cfg.out_dir:
        _write_json(Path(cfg.out_dir) / "validation.json", data)
    for f in report.failures:
        print(f"mismatch {f['record_id']} ({f['subtask']}): {'; '.join(f['problems'])}")
    print(
        f"records {report.total}, answers agree {report.answer_ok}, "
        f"anchors visible {report.anchors_ok}/{report.anchors_total}, "
        f"choice ok {report.choice_ok}/{report.choice_total}"
    )
    return EXIT_OK if report.passed else EXIT_INPUT


def cmd_stats(args, cfg: EngineConfig) -> int:
    sources = {}
    if args.scenes:
        sources = {sid: s.source_tag for sid, s in _load_all(args.scenes).items()}
    stats = compute_stats(read_jsonl(args.qa), sources)
    sys.stdout.write(format_table(stats))
    if cfg.out_dir:
        _write_json(Path(cfg.out_dir) / "stats.json", stats)
    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


SUITES = {
    "qa": lambda a: synthetic.qa_suite_specs(metric=not a.non_metric),
    "two-plane": lambda a: list(synthetic.two_plane_specs().values()),
    "lifting": lambda a: [synthetic.lifting_spec()],
    "orbit": lambda a: [synthetic.orbit_spec(a.frames or 10, metric=not a.non_metric)],
    "corridor": lambda a: [synthetic.corridor_spec(a.frames or 8, metric=not a.non_metric)],
}


def cmd_gen_synthetic(args, cfg: EngineConfig) -> int:
    out = _out_dir(cfg, "synthetic")
    paths = synthetic.write_suite(out, SUITES[args.suite](args))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_run(args, cfg: EngineConfig) -> int:
    manifests = _manifests(args.manifests)
    scenes = {}
    for m in manifests:
        s = load_scene(m)
        scenes[s.scene_id] = s
    out = _out_dir(cfg)
    result, report = run_qa(manifests, cfg, cfg.cache_dir, out)
    qa_path = out / "qa.jsonl"
    if result.path is None:
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl([], qa_path)
    _write_json(out / "run_report.json", report.to_json())
    vrep = validate_corpus(qa_path, scenes, cfg)
    _write_json(out / "validation.json", vrep.to_json())
    stats = compute_stats(read_jsonl(qa_path), {sid: s.source_tag for sid, s in scenes.items()})
    _write_json(out / "stats.json", stats)
    (out / "stats.txt").write_text(format_table(stats), encoding="utf-8")
    print(f"wrote {len(result.records)} records; validation {'passed' if vrep.passed else 'FAILED'}")
    return EXIT_OK if vrep.passed else EXIT_INPUT


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommands repeat the flags without defaults so they do not mask values given before the command
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file", **kw)
    common.add_argument("--seed", type=int, **kw)
    common.add_argument("--workers", type=int, help="workers for the parallel stages", **kw)
    common.add_argument("--cache-dir", **kw)
    common.add_argument("--out", help="output directory", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialforge", parents=[_global_flags(True)], description=__doc__)
    common = _global_flags(False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate scene manifests")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synthesize", parents=[common], help="generate QA records")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--marked", action="store_true", help="also render marked images")
    p.add_argument("--quota", action="append", metavar="SUBTASK=N")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("lift", parents=[common], help="lift per-view detections to 3D boxes")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--detections", help="directory of per-frame detection files")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("validate", parents=[common], help="recompute answers with the oracle")
    p.add_argument("qa")
    p.add_argument("manifests", nargs="*")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", parents=[common], help="corpus distribution table")
    p.add_argument("qa")
    p.add_argument("--scenes", nargs="*", help="manifests, to report source tags")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write synthetic test scenes")
    p.add_argument("--suite", choices=sorted(SUITES), default="qa")
    p.add_argument("--frames", type=int)
    p.add_argument("--non-metric", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("run", parents=[common], help="synthesize, validate and summarize")
    p.add_argument("manifests", nargs="+")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except (InputError, ManifestError, FileNotFoundError, pydantic.ValidationError, yaml.YAMLError,
            json.JSONDecodeError, UnknownTemplateError, PipelineBuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ErrorCeilingExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        for e in exc.report.errors[:20]:
            print(f"  {e.stage_id} {e.item}: {e.error}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
