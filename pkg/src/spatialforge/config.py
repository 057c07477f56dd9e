"""Engine configuration.

One YAML file, overridable through ``SPATIALFORGE_*`` environment variables
(nested keys joined with ``__``, e.g. ``SPATIALFORGE_EXTRACTION__TAU=0.3``)
and finally by explicit CLI overrides.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Literal, Mapping

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

ENV_PREFIX = "SPATIALFORGE_"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ExtractionConfig(_Model):
    tau: float = Field(0.25, ge=0.0, le=1.0)
    stride: int = Field(2, ge=1)
    containment_eps: float = Field(1e-9, ge=0.0)
    max_cloud_points: int = Field(4096, ge=1)
    occupancy_mode: Literal["points", "voxels"] = "points"
    voxel_size: float = Field(0.05, gt=0.0)
    max_depth: float = Field(20.0, gt=0.0)
    refine_prompt: Literal["box2d", "mask", "points"] = "box2d"


class Margins(_Model):
    lateral: float = Field(0.10, ge=0.0)
    depth: float = Field(0.10, ge=0.0)
    vertical: float = Field(0.05, ge=0.0)


class PairConfig(_Model):
    min_shared: int = Field(1, ge=1)
    min_yaw_delta: float = Field(15.0, ge=0.0, le=180.0)
    max_pairs: int = Field(64, ge=0)


class QaConfig(_Model):
    quotas: dict[str, int] = Field(default_factory=dict)
    decimals: int = Field(2, ge=0, le=6)
    choice_fraction: float = Field(0.5, ge=0.0, le=1.0)
    comparable_ratio: float = Field(1.02, ge=1.0)
    distance_mode: Literal["center", "surface"] = "center"
    bearing_margin: float = Field(0.1, ge=0.0, le=0.5)
    order_margin: float = Field(0.05, ge=0.0, le=0.5)
    near_threshold: float = Field(1.5, gt=0.0)
    far_threshold: float = Field(3.5, gt=0.0)
    class_margin: float = Field(0.1, ge=0.0)
    nearest_margin: float = Field(0.1, ge=0.0)
    grid_resolution: float = Field(0.1, gt=0.0)
    rotation_deadband: float = Field(5.0, ge=0.0, le=180.0)
    stationary_threshold: float = Field(0.05, ge=0.0)
    render_marked: bool = False

    @field_validator("quotas")
    @classmethod
    def _known_subtasks(cls, v: dict[str, int]) -> dict[str, int]:
        from .qa.templates import SUBTASKS

        for name, q in v.items():
            if name not in SUBTASKS:
                raise ValueError(f"unknown sub-task {name!r}")
            if q < 0:
                raise ValueError(f"quota for {name!r} must be >= 0")
        return v


class LiftConfig(_Model):
    stride: int = Field(1, ge=1)
    outlier_k: int = Field(16, ge=1)
    outlier_sigma: float = Field(2.0, ge=0.0)
    iou_threshold: float = Field(0.3, gt=0.0, le=1.0)
    association: Literal["aabb", "chamfer"] = "aabb"
    chamfer_threshold: float = Field(0.05, gt=0.0)
    min_points: int = Field(50, ge=1)
    fit_mode: Literal["gravity", "pca"] = "gravity"


class ParallelConfig(_Model):
    workers: int = Field(1, ge=1, le=256)
    stage_workers: dict[str, int] = Field(default_factory=dict)
    queue_capacity: int = Field(8, ge=1)
    executor: Literal["thread", "process"] = "thread"
    error_ceiling: float = Field(0.10, ge=0.0, le=1.0)

    @field_validator("stage_workers")
    @classmethod
    def _positive(cls, v: dict[str, int]) -> dict[str, int]:
        for name, n in v.items():
            if n < 1:
                raise ValueError(f"worker count for {name!r} must be >= 1")
        return v


class AdapterConfig(_Model):
    refine: Literal["none", "file", "service"] = "none"
    refine_path: str | None = None
    refine_url: str | None = None
    detect: Literal["file", "service"] = "file"
    detect_path: str | None = None
    detect_url: str | None = None
    timeout: float = Field(10.0, gt=0.0)
    retries: int = Field(2, ge=0)
    max_in_flight: int = Field(4, ge=1)


class EngineConfig(_Model):
    seed: int = 0
    extraction: ExtractionConfig = ExtractionConfig()
    margins: Margins = Margins()
    pairs: PairConfig = PairConfig()
    qa: QaConfig = QaConfig()
    lifting: LiftConfig = LiftConfig()
    parallel: ParallelConfig = ParallelConfig()
    adapters: AdapterConfig = AdapterConfig()
    cache_dir: str | None = None
    out_dir: str | None = None

    def digest(self, *sections: str) -> str:
        """Stable hash of the whole config, or only of the named sections."""
        data = self.model_dump(mode="json")
        if sections:
            data = {s: data[s] for s in sections}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def updated(self, overrides: Mapping[str, Any]) -> "EngineConfig":
        """Apply dotted-key overrides, e.g. ``{"parallel.workers": 4}``."""
        data = self.model_dump()
        for key, value in overrides.items():
            _set_dotted(data, key.split("."), value)
        return EngineConfig.model_validate(data)


def _set_dotted(data: dict, keys: list[str], value: Any) -> None:
    for k in keys[:-1]:
        if k not in data or not isinstance(data[k], dict):
            raise ValueError(f"unknown config key {'.'.join(keys)!r}")
        data = data[k]
    data[keys[-1]] = value


def dump_config(config: EngineConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def parse_config(text: str) -> EngineConfig:
    data = yaml.safe_load(text) or {}
    return EngineConfig.model_validate(data)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = yaml.safe_load(raw)
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> EngineConfig:
    """File, then environment, then explicit overrides (highest precedence)."""
    config = parse_config(Path(path).read_text()) if path else EngineConfig()
    env = env_overrides(environ)
    if env:
        config = config.updated(env)
    if overrides:
        config = config.updated(overrides)
    return config
