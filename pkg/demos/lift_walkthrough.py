"""Lift per-view detections of three boxes back into 3D and compare against the boxes used to render them.

    python3 demos/lift_walkthrough.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from spatialforge.config import EngineConfig
from spatialforge.lifting import gravity_box_iou
from spatialforge.pipeline import run_lift
from spatialforge.scene_model import load_scene
from spatialforge.synthetic import gen_synthetic, lifting_spec


def main(out: Path) -> None:
    manifest = gen_synthetic(lifting_spec(), out / "scenes")
    truth = load_scene(manifest)
    (lifted,), report = run_lift([manifest], EngineConfig(), out / "lifted")
    for inst in lifted.instances:
        box = inst.fitted_box
        best = max(truth.boxes, key=lambda t: gravity_box_iou(box, t))
        print(
            f"{inst.instance_id} ({inst.tag}) center {tuple(round(c, 3) for c in box.center)} "
            f"extents {tuple(round(e, 3) for e in box.extents)} IoU vs {best.id}: "
            f"{gravity_box_iou(box, best):.3f}"
        )
    print("re-ingestible manifest:", lifted.path)
    for st in report.stages:
        print(f"  {st.stage_id:12s} in {st.items_in:3d} done {st.items_out:3d} errors {st.errors} emitted {st.emitted:3d}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()))
