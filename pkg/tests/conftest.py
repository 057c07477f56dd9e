from __future__ import annotations

import sys

import numpy as np
import pytest

from spatialforge.config import EngineConfig
from spatialforge.pipeline import index_scene
from spatialforge.scene_model import load_scene
from spatialforge.synthetic import (
    gen_synthetic,
    lifting_spec,
    orbit_spec,
    qa_suite_specs,
    two_plane_specs,
    write_suite,
)


@pytest.fixture(scope="session")
def qa_suite(tmp_path_factory):
    """Manifest paths of the metric QA suite."""
    root = tmp_path_factory.mktemp("qa_suite")
    return write_suite(root, qa_suite_specs())


@pytest.fixture(scope="session")
def qa_scenes(qa_suite):
    """(scene, index) pairs for the QA suite."""
    out = []
    for path in qa_suite:
        scene = load_scene(path)
        out.append((scene, index_scene(scene, EngineConfig())))
    return out


@pytest.fixture(scope="session")
def orbit(qa_scenes):
    return next((s, i) for s, i in qa_scenes if s.scene_id == "orbit_room")


@pytest.fixture(scope="session")
def two_plane(tmp_path_factory):
    root = tmp_path_factory.mktemp("two_plane")
    return {name: gen_synthetic(spec, root / name) for name, spec in two_plane_specs().items()}


@pytest.fixture(scope="session")
def lift_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("lift")
    return gen_synthetic(lifting_spec(), root)


@pytest.fixture(scope="session")
def small_orbit(tmp_path_factory):
    """A 4-frame orbit used by cheap CLI and pipeline tests."""
    root = tmp_path_factory.mktemp("small")
    return gen_synthetic(orbit_spec(4), root)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def qa_records(qa_scenes):
    """Records per scene id for the default config."""
    from spatialforge.qa.synth import synthesize_scene

    return {s.scene_id: synthesize_scene(s, i, EngineConfig()) for s, i in qa_scenes}


@pytest.fixture
def build_scene(tmp_path):
    """Render and index a small custom scene."""
    from spatialforge.synthetic import SyntheticSceneSpec

    def make(boxes, poses, scene_id="custom", **kw):
        spec = SyntheticSceneSpec(scene_id, boxes=list(boxes), poses=list(poses), **kw)
        scene = load_scene(gen_synthetic(spec, tmp_path / scene_id))
        return scene, index_scene(scene, EngineConfig())

    return make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(mod.RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
