"""Occupancy of a far plane behind a near one, fully hidden, fully open and half covered.

    python3 demos/occlusion_filter.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from spatialforge.attributes import filter_and_extract
from spatialforge.config import EngineConfig
from spatialforge.scene_model import load_depth, load_scene
from spatialforge.synthetic import gen_synthetic, two_plane_specs


def main() -> None:
    cfg = EngineConfig().extraction
    root = Path(tempfile.mkdtemp())
    for name, spec in two_plane_specs().items():
        scene = load_scene(gen_synthetic(spec, root / name))
        frame = scene.frames[0]
        for rec in filter_and_extract(scene, frame, load_depth(scene, frame), cfg):
            print(f"{name:7s} {rec.object_id}: occupancy {rec.occupancy:.3f} visible {rec.visible}")


if __name__ == "__main__":
    main()
