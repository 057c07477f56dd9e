"""Staged parallel execution with bounded queues and a content-addressed cache.

Each stage owns one bounded input queue and a pool of worker threads. A
producer blocks when the downstream queue is full. Every upstream worker puts
one end-of-stream marker when it exits; a stage is drained once it has seen
as many markers as its upstream has workers. Per-item failures go to an error
list instead of stopping the run, unless a stage's error rate ends up above
the configured ceiling.

With ``executor="process"`` the worker threads of parallel map stages hand
their items to a process pool, so queue handling stays in one place.
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import tempfile
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import __version__
from .adapters import make_detector, make_refiner
from .attributes import FrameObjectAttributes, ObjectFrameIndex, build_index, filter_and_extract
from .config import EngineConfig
from .lifting import LiftedInstance, associate_instances, detection_clouds, fit_groups
from .qa.records import QaRecord, write_jsonl
from .qa.render import render_record
from .qa.sampling import ViewPair, sample_view_pairs
from .qa.synth import OccupancyGrid, SynthContext, apply_quotas, synthesize_frame, synthesize_pair
from .scene_graph import SceneGraph, build_frame_graph
from .scene_model import Scene, load_depth, load_scene, rebase_scene, save_scene, scene_to_manifest

ENGINE_VERSION = __version__


class PipelineError(RuntimeError):
    pass


class PipelineBuildError(PipelineError):
    pass


class ErrorCeilingExceeded(PipelineError):
    def __init__(self, message: str, report: "RunReport") -> None:
        super().__init__(message)
        self.report = report


# cache ---------------------------------------------------------------------------


class ContentCache:
    """Files under ``root`` named by key; each stores a digest of its payload.

    Writes go to a temporary file that is renamed into place, so readers only
    ever see complete entries. A payload that fails its digest is evicted and
    reported as a miss.
    """

    MAGIC = b"SFC1\n"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(stage_id: str, input_digest: str, config_digest: str, version: str = ENGINE_VERSION) -> str:
        raw = "\x1f".join((stage_id, input_digest, config_digest, version)).encode("utf-8")
        return hashlib.sha256(raw).hexdigest()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / key

    def get(self, key: str) -> bytes | None:
        path = self.path(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            return None
        head = len(self.MAGIC)
        digest, payload = blob[head : head + 64], blob[head + 65 :]
        if not blob.startswith(self.MAGIC) or hashlib.sha256(payload).hexdigest().encode("ascii") != digest:
            try:
                path.unlink()
            except FileNotFoundError:
                pass
            return None
        return payload

    def put(self, key: str, payload: bytes) -> None:
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = self.MAGIC + hashlib.sha256(payload).hexdigest().encode("ascii") + b"\n" + payload
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __contains__(self, key: str) -> bool:
        return self.get(key) is not None


@dataclass(frozen=True)
class Cached:
    """Stage result annotated with whether it came from the cache."""

    outputs: list
    hit: bool


# stage graph ---------------------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    input_kind: str
    output_kind: str
    fn: Callable[..., Any]
    workers: int = 1
    queue_capacity: int = 8
    upstream: str | None = None  # None: fed by the run's inputs
    reduce: bool = False
    group_key: Callable[[Any], str] | None = None
    group_size: Callable[[Any], int] | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise PipelineBuildError(f"stage {self.stage_id}: worker_count must be >= 1")
        if self.queue_capacity < 1:
            raise PipelineBuildError(f"stage {self.stage_id}: queue_capacity must be >= 1")
        if self.reduce and self.workers != 1:
            raise PipelineBuildError(f"stage {self.stage_id}: reduce stages run with one worker")


@dataclass(frozen=True)
class StageContext:
    config: EngineConfig
    cache: ContentCache | None = None
    out_dir: Path | None = None


@dataclass(frozen=True, eq=False)
class Pipeline:
    mode: str
    stages: tuple[StageSpec, ...]
    order: tuple[str, ...]
    config: EngineConfig

    def stage(self, stage_id: str) -> StageSpec:
        for s in self.stages:
            if s.stage_id == stage_id:
                return s
        raise KeyError(stage_id)

    def downstream(self, stage_id: str) -> list[StageSpec]:
        return [s for s in self.stages if s.upstream == stage_id]


def validate_stages(stages: Sequence[StageSpec]) -> tuple[str, ...]:
    """Topological order of a valid stage graph."""
    if not stages:
        raise PipelineBuildError("pipeline has zero stages")
    by_id = {}
    for s in stages:
        if s.stage_id in by_id:
            raise PipelineBuildError(f"duplicate stage id {s.stage_id!r}")
        by_id[s.stage_id] = s
    for s in stages:
        if s.upstream is None:
            continue
        up = by_id.get(s.upstream)
        if up is None:
            raise PipelineBuildError(f"stage {s.stage_id!r} reads from unknown stage {s.upstream!r}")
        if up.output_kind != s.input_kind:
            raise PipelineBuildError(
                f"kind mismatch: {s.stage_id!r} consumes {s.input_kind!r} but {up.stage_id!r} produces {up.output_kind!r}"
            )
    graph = {s.stage_id: ({s.upstream} if s.upstream else set()) for s in stages}
    try:
        order = tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise PipelineBuildError(f"stage graph has a cycle: {exc.args[1]}") from None
    if not any(s.upstream is None for s in stages):
        raise PipelineBuildError("pipeline has no source stage")
    return order


# QA stages -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FrameTask:
    scene: Scene
    frame_id: str
    n_frames: int

    @property
    def key(self) -> str:
        return f"{self.scene.scene_id}/{self.frame_id}"


@dataclass(frozen=True, eq=False)
class FrameAttrs:
    scene: Scene
    frame_id: str
    n_frames: int
    records: tuple[FrameObjectAttributes, ...]

    @property
    def key(self) -> str:
        return f"{self.scene.scene_id}/{self.frame_id}"


@dataclass(frozen=True, eq=False)
class SceneIndexed:
    scene: Scene
    index: ObjectFrameIndex

    @property
    def key(self) -> str:
        return self.scene.scene_id


@dataclass(frozen=True, eq=False)
class SceneGraphs:
    scene: Scene
    index: ObjectFrameIndex
    graphs: dict[str, SceneGraph]

    @property
    def key(self) -> str:
        return self.scene.scene_id


@dataclass(frozen=True, eq=False)
class SynthTask:
    scene: Scene
    index: ObjectFrameIndex
    graphs: dict[str, SceneGraph]
    grid: OccupancyGrid
    frame_id: str | None = None
    pair: ViewPair | None = None

    @property
    def key(self) -> str:
        unit = self.frame_id if self.pair is None else f"{self.pair.frame_a}+{self.pair.frame_b}"
        return f"{self.scene.scene_id}/{unit}"


@dataclass(frozen=True, eq=False)
class QaBatch:
    scene: Scene
    index: ObjectFrameIndex
    records: tuple[QaRecord, ...]


@dataclass(frozen=True, eq=False)
class QaOutput:
    records: tuple[QaRecord, ...]
    path: Path | None


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def frame_input_digest(scene: Scene, frame_id: str) -> str:
    """Digest of everything extraction reads for one frame: its manifest entry, the boxes, the depth file."""
    manifest = scene_to_manifest(scene)
    entry = next(f for f in manifest["frames"] if f["frame_id"] == frame_id)
    frame = scene.frame_by_id[frame_id]
    depth = _sha(scene.resolve(frame.depth_ref).read_bytes())
    return _sha(_canonical({"scene": scene.scene_id, "frame": entry, "boxes": manifest["boxes"], "depth": depth}))


_REFINERS: dict[str, Any] = {}


def _refiner_for(config: EngineConfig):
    key = config.digest("adapters")
    if key not in _REFINERS:
        _REFINERS[key] = make_refiner(config.adapters)
    return _REFINERS[key]


def stage_load(path, ctx: StageContext) -> list[FrameTask]:
    scene = load_scene(path)
    return [FrameTask(scene, f.frame_id, len(scene.frames)) for f in scene.frames]


def extract_frame(task: FrameTask, config: EngineConfig) -> list[FrameObjectAttributes]:
    scene = task.scene
    frame = scene.frame_by_id[task.frame_id]
    depth = load_depth(scene, frame, config.extraction.max_depth)
    return filter_and_extract(scene, frame, depth, config.extraction, _refiner_for(config))


def stage_extract(task: FrameTask, ctx: StageContext) -> Cached:
    cache = ctx.cache
    key = None
    if cache is not None:
        key = ContentCache.key(
            "extract", frame_input_digest(task.scene, task.frame_id), ctx.config.digest("extraction", "adapters")
        )
        payload = cache.get(key)
        if payload is not None:
            recs = tuple(FrameObjectAttributes.from_json(r) for r in json.loads(payload))
            return Cached([FrameAttrs(task.scene, task.frame_id, task.n_frames, recs)], True)
    recs = tuple(extract_frame(task, ctx.config))
    if cache is not None:
        cache.put(key, _canonical([r.to_json() for r in recs]))
    return Cached([FrameAttrs(task.scene, task.frame_id, task.n_frames, recs)], False)


def stage_index(items: list[FrameAttrs], ctx: StageContext) -> list[SceneIndexed]:
    scene = items[0].scene
    records = [r for it in sorted(items, key=lambda i: i.frame_id) for r in it.records]
    return [SceneIndexed(scene, build_index(scene, records))]


def stage_graph(item: SceneIndexed, ctx: StageContext) -> list[SceneGraphs]:
    cfg = ctx.config
    graphs = {
        f.frame_id: build_frame_graph(item.scene, item.index, f.frame_id, cfg.margins, cfg.qa.distance_mode)
        for f in item.scene.frames
    }
    return [SceneGraphs(item.scene, item.index, graphs)]


def stage_sample_pairs(item: SceneGraphs, ctx: StageContext) -> list[SynthTask]:
    cfg = ctx.config
    scene, index, graphs = item.scene, item.index, item.graphs
    grid = OccupancyGrid.from_scene(scene, cfg.qa.grid_resolution)
    p = cfg.pairs
    pairs = sample_view_pairs(scene, index, p.min_shared, p.max_pairs, p.min_yaw_delta, cfg.seed)
    tasks = [SynthTask(scene, index, {f.frame_id: graphs[f.frame_id]}, grid, frame_id=f.frame_id) for f in scene.frames]
    for pair in pairs:
        sub = {pair.frame_a: graphs[pair.frame_a], pair.frame_b: graphs[pair.frame_b]}
        tasks.append(SynthTask(scene, index, sub, grid, pair=pair))
    return tasks


def stage_synthesize(task: SynthTask, ctx: StageContext) -> list[QaBatch]:
    sctx = SynthContext(task.scene, task.index, ctx.config, dict(task.graphs), task.grid)
    recs = synthesize_frame(sctx, task.frame_id) if task.pair is None else synthesize_pair(sctx, task.pair)
    return [QaBatch(task.scene, task.index, tuple(recs))]


def stage_write(batches: list[QaBatch], ctx: StageContext) -> list[QaOutput]:
    records = apply_quotas([r for b in batches for r in b.records], ctx.config.qa.quotas)
    path = None
    if ctx.out_dir is not None:
        ctx.out_dir.mkdir(parents=True, exist_ok=True)
        path = ctx.out_dir / "qa.jsonl"
        write_jsonl(records, path)
        if ctx.config.qa.render_marked:
            scenes = {b.scene.scene_id: (b.scene, b.index) for b in batches}
            for rec in records:
                scene, index = scenes[rec.provenance.scene_id]
                render_record(scene, index, rec, ctx.out_dir)
    return [QaOutput(tuple(records), path)]


# lifting stages ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DetectTask:
    scene: Scene
    frame_id: str
    n_frames: int
    detections: tuple

    @property
    def key(self) -> str:
        return f"{self.scene.scene_id}/{self.frame_id}"


@dataclass(frozen=True, eq=False)
class FrameClouds:
    scene: Scene
    frame_id: str
    n_frames: int
    clouds: tuple

    @property
    def key(self) -> str:
        return f"{self.scene.scene_id}/{self.frame_id}"


@dataclass(frozen=True, eq=False)
class SceneGroups:
    scene: Scene
    groups: tuple

    @property
    def key(self) -> str:
        return self.scene.scene_id


@dataclass(frozen=True, eq=False)
class LiftOutput:
    scene: Scene
    instances: tuple[LiftedInstance, ...]
    path: Path | None = None

    @property
    def key(self) -> str:
        return self.scene.scene_id


def stage_detect_ingest(path, ctx: StageContext) -> list[DetectTask]:
    scene = load_scene(path)
    detector = make_detector(ctx.config.adapters, scene.root / "detections")
    out = []
    for f in scene.frames:
        dets = detector.detect(f.frame_id, str(scene.resolve(f.image_ref)))
        for d in dets:
            if (d.mask.width, d.mask.height) != (f.intrinsics.width, f.intrinsics.height):
                raise ValueError(f"frame {f.frame_id}: detection mask size does not match the frame")
        out.append(DetectTask(scene, f.frame_id, len(scene.frames), tuple(dets)))
    return out


def stage_backproject(task: DetectTask, ctx: StageContext) -> list[FrameClouds]:
    cfg = ctx.config
    scene = task.scene
    frame = scene.frame_by_id[task.frame_id]
    depth = load_depth(scene, frame, cfg.extraction.max_depth)
    clouds = detection_clouds([frame], {frame.frame_id: depth}, {frame.frame_id: task.detections}, cfg.lifting)
    return [FrameClouds(scene, task.frame_id, task.n_frames, tuple(clouds))]


def stage_associate(items: list[FrameClouds], ctx: StageContext) -> list[SceneGroups]:
    lc = ctx.config.lifting
    clouds = [c for it in items for c in it.clouds]
    groups = associate_instances(clouds, lc.iou_threshold, lc.association, lc.chamfer_threshold)
    return [SceneGroups(items[0].scene, tuple(tuple(g) for g in groups))]


def stage_fit(item: SceneGroups, ctx: StageContext) -> list[LiftOutput]:
    scene = item.scene
    instances = fit_groups(item.groups, ctx.config.lifting, metric=scene.depth_metric)
    lifted = scene.replace(boxes=tuple(i.fitted_box for i in instances), source_tag="lifted")
    return [LiftOutput(lifted, tuple(instances))]


def stage_emit_scene(item: LiftOutput, ctx: StageContext) -> list[LiftOutput]:
    scene = item.scene
    if ctx.out_dir is not None:
        path = ctx.out_dir / f"{scene.scene_id}.lifted.json"
    else:
        path = scene.root / "scene.lifted.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    out = rebase_scene(scene, path.parent)
    save_scene(out, path)
    return [LiftOutput(out, item.instances, path)]


def _scene_key(item) -> str:
    return item.scene.scene_id


def _scene_frames(item) -> int:
    return item.n_frames


PARALLEL_STAGES = ("extract", "synthesize", "backproject")


def build_pipeline(
    config: EngineConfig = EngineConfig(),
    mode: str = "qa",
    wiring: Mapping[str, str | None] | None = None,
) -> Pipeline:
    """Validated stage DAG for ``mode`` "qa" or "lift"; ``wiring`` overrides a stage's upstream."""
    par = config.parallel
    cap = par.queue_capacity

    def workers(stage_id: str) -> int:
        default = par.workers if stage_id in PARALLEL_STAGES else 1
        return par.stage_workers.get(stage_id, default)

    grouped = dict(reduce=True, group_key=_scene_key, group_size=_scene_frames)
    if mode == "qa":
        table = [
            ("load", "manifest_path", "frame_task", stage_load, None, {}),
            ("extract", "frame_task", "frame_attrs", stage_extract, "load", {}),
            ("index", "frame_attrs", "scene_index", stage_index, "extract", grouped),
            ("graph", "scene_index", "scene_graphs", stage_graph, "index", {}),
            ("sample-pairs", "scene_graphs", "synth_task", stage_sample_pairs, "graph", {}),
            ("synthesize", "synth_task", "qa_batch", stage_synthesize, "sample-pairs", {}),
            ("write", "qa_batch", "qa_output", stage_write, "synthesize", dict(reduce=True)),
        ]
    elif mode == "lift":
        table = [
            ("detect-ingest", "manifest_path", "detect_task", stage_detect_ingest, None, {}),
            ("backproject", "detect_task", "frame_clouds", stage_backproject, "detect-ingest", {}),
            ("associate", "frame_clouds", "scene_groups", stage_associate, "backproject", grouped),
            ("fit", "scene_groups", "lift_result", stage_fit, "associate", {}),
            ("emit-scene", "lift_result", "scene_manifest", stage_emit_scene, "fit", {}),
        ]
    else:
        raise PipelineBuildError(f"unknown pipeline mode {mode!r}")
    wiring = dict(wiring or {})
    unknown = set(wiring) - {row[0] for row in table}
    if unknown:
        raise PipelineBuildError(f"wiring names unknown stages: {sorted(unknown)}")
    stages = []
    for sid, kin, kout, fn, up, extra in table:
        n = 1 if extra.get("reduce") else workers(sid)
        stages.append(StageSpec(sid, kin, kout, fn, n, cap, wiring.get(sid, up), **extra))
    return Pipeline(mode, tuple(stages), validate_stages(stages), config)


# execution -----------------------------------------------------------------------


@dataclass
class StageReport:
    stage_id: str
    workers: int
    items_in: int = 0
    items_out: int = 0
    errors: int = 0
    emitted: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    queue_high_water: int = 0
    wall_ms: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ErrorRecord:
    stage_id: str
    item: str
    error: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunReport:
    stages: list[StageReport]
    errors: list[ErrorRecord] = field(default_factory=list)
    wall_ms_total: float = 0.0

    def stage(self, stage_id: str) -> StageReport:
        return next(s for s in self.stages if s.stage_id == stage_id)

    @property
    def cache_hits(self) -> int:
        return sum(s.cache_hits for s in self.stages)

    @property
    def cache_misses(self) -> int:
        return sum(s.cache_misses for s in self.stages)

    def to_json(self) -> dict:
        wall = {s.stage_id: s.wall_ms for s in self.stages}
        wall["total"] = self.wall_ms_total
        return {
            "stages": [s.to_json() for s in self.stages],
            "cache": {"hits": self.cache_hits, "misses": self.cache_misses},
            "wall_ms": wall,
            "errors": [e.to_json() for e in self.errors],
        }


@dataclass
class RunResult:
    outputs: dict[str, list]
    report: RunReport


_EOS = object()  # one per exiting upstream worker
_DONE = object()  # wakes sibling workers once a stage is drained


def _describe(item: Any) -> str:
    key = getattr(item, "key", None)
    return str(key) if key is not None else str(item)[:200]


def run(
    pipeline: Pipeline,
    inputs: Iterable[Any],
    cache: ContentCache | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Push ``inputs`` through the stage graph; outputs of terminal stages are collected per stage."""
    cfg = pipeline.config
    ctx = StageContext(cfg, cache, Path(out_dir) if out_dir is not None else None)
    specs = {s.stage_id: s for s in pipeline.stages}
    queues = {sid: queue.Queue(maxsize=s.queue_capacity) for sid, s in specs.items()}
    reports = {sid: StageReport(sid, s.workers) for sid, s in specs.items()}
    downstream = {sid: pipeline.downstream(sid) for sid in specs}
    producers = {sid: (specs[s.upstream].workers if s.upstream else 1) for sid, s in specs.items()}
    eos_seen = dict.fromkeys(specs, 0)
    spans: dict[str, list[float]] = {sid: [] for sid in specs}
    outputs: dict[str, list] = {sid: [] for sid in specs if not downstream[sid]}
    errors: list[ErrorRecord] = []
    lock = threading.Lock()
    pools: dict[str, ProcessPoolExecutor] = {}
    if cfg.parallel.executor == "process":
        for sid, s in specs.items():
            if s.workers > 1 and not s.reduce:
                pools[sid] = ProcessPoolExecutor(max_workers=s.workers)

    def put(sid: str, item: Any) -> None:
        q = queues[sid]
        q.put(item)
        size = q.qsize()
        with lock:
            rep = reports[sid]
            rep.queue_high_water = max(rep.queue_high_water, size)

    def emit(sid: str, items: list) -> None:
        with lock:
            reports[sid].emitted += len(items)
            if sid in outputs:
                outputs[sid].extend(items)
        for d in downstream[sid]:
            for it in items:
                put(d.stage_id, it)

    def call(sid: str, arg: Any) -> list:
        spec = specs[sid]
        t0 = time.perf_counter()
        try:
            if sid in pools:
                res = pools[sid].submit(spec.fn, arg, ctx).result()
            else:
                res = spec.fn(arg, ctx)
        finally:
            with lock:
                spans[sid].append(t0)
                spans[sid].append(time.perf_counter())
        if isinstance(res, Cached):
            with lock:
                if res.hit:
                    reports[sid].cache_hits += 1
                else:
                    reports[sid].cache_misses += 1
            res = res.outputs
        return list(res)

    def fail(sid: str, what: str, exc: BaseException, n: int = 1) -> None:
        with lock:
            reports[sid].errors += n
            errors.append(ErrorRecord(sid, what, f"{type(exc).__name__}: {exc}"))

    def worker(sid: str) -> None:
        spec = specs[sid]
        q = queues[sid]
        groups: dict[str, list] = {}
        try:
            while True:
                item = q.get()
                if item is _DONE:
                    break
                if item is _EOS:
                    with lock:
                        eos_seen[sid] += 1
                        drained = eos_seen[sid] == producers[sid]
                    if drained:
                        for _ in range(spec.workers - 1):
                            q.put(_DONE)
                        break
                    continue
                with lock:
                    reports[sid].items_in += 1
                if spec.reduce:
                    key = spec.group_key(item) if spec.group_key else ""
                    groups.setdefault(key, []).append(item)
                    if spec.group_size is not None and len(groups[key]) == spec.group_size(item):
                        flush(sid, groups.pop(key))
                    continue
                try:
                    out = call(sid, item)
                except Exception as exc:  # quarantined
                    fail(sid, _describe(item), exc)
                    continue
                with lock:
                    reports[sid].items_out += 1
                emit(sid, out)
            for key in sorted(groups):
                flush(sid, groups[key])
        finally:
            for d in downstream[sid]:
                put(d.stage_id, _EOS)

    def flush(sid: str, group: list) -> None:
        try:
            out = call(sid, group)
        except Exception as exc:
            fail(sid, _describe(group[0]), exc, len(group))
            return
        with lock:
            reports[sid].items_out += len(group)
        emit(sid, out)

    def feeder(sources: list[str], items: list) -> None:
        try:
            for it in items:
                for sid in sources:
                    put(sid, it)
        finally:
            for sid in sources:
                put(sid, _EOS)

    t_start = time.perf_counter()
    threads = []
    for sid in pipeline.order:
        for i in range(specs[sid].workers):
            threads.append(threading.Thread(target=worker, args=(sid,), name=f"{sid}-{i}", daemon=True))
    sources = [sid for sid, s in specs.items() if s.upstream is None]
    threads.append(threading.Thread(target=feeder, args=(sources, list(inputs)), name="feeder", daemon=True))
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        for pool in pools.values():
            pool.shutdown()

    for sid, ts in spans.items():
        if ts:
            reports[sid].wall_ms = (max(ts) - min(ts)) * 1000.0
    report = RunReport([reports[sid] for sid in pipeline.order], errors, (time.perf_counter() - t_start) * 1000.0)
    for rep in report.stages:
        if rep.items_in and rep.errors / rep.items_in > cfg.parallel.error_ceiling:
            raise ErrorCeilingExceeded(
                f"stage {rep.stage_id}: {rep.errors}/{rep.items_in} items failed "
                f"(ceiling {cfg.parallel.error_ceiling:.0%})",
                report,
            )
    return RunResult(outputs, report)


def run_qa(
    manifests: Sequence[str | Path],
    config: EngineConfig = EngineConfig(),
    cache_dir: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> tuple[QaOutput, RunReport]:
    pipe = build_pipeline(config, "qa")
    cache = ContentCache(cache_dir) if cache_dir is not None else None
    res = run(pipe, [str(m) for m in manifests], cache, out_dir)
    out = res.outputs["write"]
    return (out[0] if out else QaOutput((), None)), res.report


def run_lift(
    manifests: Sequence[str | Path],
    config: EngineConfig = EngineConfig(),
    out_dir: str | Path | None = None,
) -> tuple[list[LiftOutput], RunReport]:
    pipe = build_pipeline(config, "lift")
    res = run(pipe, [str(m) for m in manifests], None, out_dir)
    return sorted(res.outputs["emit-scene"], key=lambda o: o.scene.scene_id), res.report


def index_scene(scene: Scene, config: EngineConfig = EngineConfig(), cache: ContentCache | None = None) -> ObjectFrameIndex:
    """Sequential extract + index for one scene, sharing the pipeline's cache entries."""
    ctx = StageContext(config, cache)
    records = []
    for f in scene.frames:
        res = stage_extract(FrameTask(scene, f.frame_id, len(scene.frames)), ctx)
        records.extend(res.outputs[0].records)
    return build_index(scene, records)
