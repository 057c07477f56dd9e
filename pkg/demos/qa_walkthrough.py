"""Render a small room, extract per-frame attributes, print one question per sub-task and mark one image.

    python3 demos/qa_walkthrough.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from spatialforge.config import EngineConfig
from spatialforge.pipeline import index_scene
from spatialforge.qa.oracle import validate_records
from spatialforge.qa.render import render_record
from spatialforge.qa.synth import synthesize_scene
from spatialforge.scene_model import load_scene
from spatialforge.synthetic import gen_synthetic, orbit_spec


def main(out: Path) -> None:
    scene = load_scene(gen_synthetic(orbit_spec(6), out / "scenes"))
    index = index_scene(scene)
    cfg = EngineConfig()
    records = synthesize_scene(scene, index, cfg)
    print(f"{scene.scene_id}: {len(scene.boxes)} boxes, {len(scene.frames)} frames, {len(records)} records")

    seen = set()
    for r in records:
        if r.subtask in seen:
            continue
        seen.add(r.subtask)
        opts = f"  options {list(r.options)}" if r.options else ""
        print(f"[{r.task:3s}] {r.subtask:28s} {r.question}\n{'':35s}-> {r.answer}{opts}")

    report = validate_records(records, scene, index, cfg)
    print(f"oracle agreement: {report.answer_ok}/{report.total}")

    example = next(r for r in records if r.task == "MC")
    for path in render_record(scene, index, example, out):
        print("marked image:", path)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()))
