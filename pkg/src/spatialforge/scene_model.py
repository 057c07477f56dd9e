"""Canonical scene representation: boxes, cameras, frames and depth.

World frame is Z-up, all lengths in meters. Poses are stored camera-to-world;
the camera looks along +Z with +X right and +Y down.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

UNIT_SCALE = {"m": 1.0, "cm": 0.01, "mm": 0.001}
DEPTH_FORMATS = ("png16_mm", "float32", "npy")


class ManifestError(ValueError):
    """Invalid scene manifest; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, message: str, pointer: str = "") -> None:
        super().__init__(f"{pointer or '/'}: {message}")
        self.message = message
        self.pointer = pointer


def normalize_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = math.fmod(a + math.pi, 2.0 * math.pi)
    if wrapped < 0:
        wrapped += 2.0 * math.pi
    out = wrapped - math.pi
    return -math.pi if out >= math.pi else out


def euler_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation for intrinsic Z-Y-X Euler angles: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def matrix_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_matrix`; at gimbal lock roll is set to 0."""
    R = np.asarray(R, dtype=float)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) < 1.0 - 1e-12:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    return roll, pitch, normalize_angle(yaw)


def _vec3(values: Sequence[float], name: str) -> tuple[float, float, float]:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components")
    if not all(math.isfinite(v) for v in out):
        raise ValueError(f"{name} must be finite")
    return out  # type: ignore[return-value]


@dataclass(frozen=True)
class ObbBox:
    """Oriented 3D box in the world frame.

    ``extents`` are full side lengths along the box's local axes and
    ``rotation`` holds (roll, pitch, yaw) in radians.
    """

    id: str
    tag: str
    center: tuple[float, float, float]
    extents: tuple[float, float, float]
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    metric: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "extents", _vec3(self.extents, "extents"))
        if min(self.extents) <= 0:
            raise ValueError("non-positive extent")
        r, p, y = _vec3(self.rotation, "rotation")
        object.__setattr__(self, "rotation", (r, p, normalize_angle(y)))
        object.__setattr__(self, "metric", bool(self.metric))

    @cached_property
    def rotation_matrix(self) -> np.ndarray:
        R = euler_to_matrix(*self.rotation)
        R.flags.writeable = False
        return R

    @property
    def yaw(self) -> float:
        return self.rotation[2]

    @property
    def volume(self) -> float:
        x, y, z = self.extents
        return x * y * z

    def replace(self, **changes: Any) -> "ObbBox":
        data = {
            "id": self.id,
            "tag": self.tag,
            "center": self.center,
            "extents": self.extents,
            "rotation": self.rotation,
            "metric": self.metric,
        }
        data.update(changes)
        return ObbBox(**data)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray  # (3, 3) camera-to-world
    translation: np.ndarray  # (3,) camera origin in world

    def __post_init__(self) -> None:
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> tuple[np.ndarray, np.ndarray]:
        """World-to-camera (R, t)."""
        Rt = self.rotation.T
        return Rt, -Rt @ self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class Frame:
    frame_id: str
    image_ref: str
    depth_ref: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    depth_format: str = "png16_mm"
    timestamp: float | None = None

    def __post_init__(self) -> None:
        if self.depth_format not in DEPTH_FORMATS:
            raise ValueError(f"unknown depth format {self.depth_format!r}")


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth along camera Z; ``valid`` marks usable pixels."""

    values: np.ndarray
    valid: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_array(cls, values: np.ndarray, max_range: float = float("inf")) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0) & (values <= max_range)
        values = np.where(valid, values, 0.0)
        values.flags.writeable = False
        valid.flags.writeable = False
        return cls(values, valid)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...]
    boxes: tuple[ObbBox, ...]
    source_tag: str = "curated"
    depth_metric: bool = True
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate frame id")
        bids = [b.id for b in self.boxes]
        if len(set(bids)) != len(bids):
            raise ValueError("duplicate object id")

    @cached_property
    def frame_by_id(self) -> dict[str, Frame]:
        return {f.frame_id: f for f in self.frames}

    @cached_property
    def box_by_id(self) -> dict[str, ObbBox]:
        return {b.id: b for b in self.boxes}

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.root / p

    def replace(self, **changes: Any) -> "Scene":
        data = {
            "scene_id": self.scene_id,
            "frames": self.frames,
            "boxes": self.boxes,
            "source_tag": self.source_tag,
            "depth_metric": self.depth_metric,
            "root": self.root,
        }
        data.update(changes)
        return Scene(**data)


# ---------------------------------------------------------------------------
# depth IO


def read_depth(path: str | Path, fmt: str, width: int, height: int, max_range: float = 20.0) -> DepthMap:
    """Load a depth file; raises ``ValueError`` if its size disagrees with the intrinsics."""
    path = Path(path)
    if fmt == "png16_mm":
        from PIL import Image

        with Image.open(path) as im:
            raw = np.asarray(im)
        if raw.dtype not in (np.uint16, np.int32, np.uint8):
            raw = raw.astype(np.uint16)
        values = raw.astype(np.float64) / 1000.0
    elif fmt == "float32":
        values = np.fromfile(path, dtype="<f4").astype(np.float64)
        if values.size != width * height:
            raise ValueError(f"{path}: expected {width * height} floats, got {values.size}")
        values = values.reshape(height, width)
    elif fmt == "npy":
        values = np.load(path, allow_pickle=False).astype(np.float64)
    else:
        raise ValueError(f"unknown depth format {fmt!r}")
    if values.shape != (height, width):
        raise ValueError(f"{path}: depth is {values.shape[1]}x{values.shape[0]}, expected {width}x{height}")
    return DepthMap.from_array(values, max_range)


def write_depth(path: str | Path, depth: np.ndarray, fmt: str) -> None:
    depth = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0)
    if fmt == "png16_mm":
        from PIL import Image

        mm = np.clip(np.rint(depth * 1000.0), 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path)
    elif fmt == "float32":
        depth.astype("<f4").tofile(path)
    elif fmt == "npy":
        with open(path, "wb") as fh:
            np.save(fh, depth.astype(np.float64), allow_pickle=False)
    else:
        raise ValueError(f"unknown depth format {fmt!r}")


def load_depth(scene: Scene, frame: Frame, max_range: float = 20.0) -> DepthMap:
    return read_depth(
        scene.resolve(frame.depth_ref),
        frame.depth_format,
        frame.intrinsics.width,
        frame.intrinsics.height,
        max_range,
    )


# ---------------------------------------------------------------------------
# manifest IO

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}

MANIFEST_SCHEMA: dict = {
    "type": "object",
    "required": ["scene_id", "frames", "boxes"],
    "additionalProperties": False,
    "properties": {
        "scene_id": {"type": "string", "minLength": 1},
        "units": {"enum": list(UNIT_SCALE)},
        "source_tag": {"type": "string"},
        "depth_metric": {"type": "boolean"},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["frame_id", "image", "depth", "intrinsics", "pose"],
                "additionalProperties": False,
                "properties": {
                    "frame_id": {"type": "string", "minLength": 1},
                    "image": {"type": "string"},
                    "depth": {"type": "string"},
                    "depth_format": {"enum": list(DEPTH_FORMATS)},
                    "timestamp": {"type": ["number", "null"]},
                    "intrinsics": {
                        "type": "object",
                        "required": ["fx", "fy", "cx", "cy", "width", "height"],
                        "additionalProperties": False,
                        "properties": {
                            "fx": _num,
                            "fy": _num,
                            "cx": _num,
                            "cy": _num,
                            "width": {"type": "integer"},
                            "height": {"type": "integer"},
                        },
                    },
                    "pose": {
                        "type": "object",
                        "required": ["rotation", "translation"],
                        "additionalProperties": False,
                        "properties": {
                            "rotation": {"type": "array", "items": _num, "minItems": 9, "maxItems": 9},
                            "translation": _vec,
                        },
                    },
                },
            },
        },
        "boxes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "tag", "center", "extents"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "tag": {"type": "string"},
                    "center": _vec,
                    "extents": _vec,
                    "rpy": _vec,
                    "rotation": {"type": "array", "items": _num, "minItems": 9, "maxItems": 9},
                    "metric": {"type": "boolean"},
                },
                "oneOf": [{"required": ["rpy"]}, {"required": ["rotation"]}],
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)


def _pointer(path: Sequence[Any]) -> str:
    return "".join(f"/{p}" for p in path)


def scene_from_manifest(
    data: dict, root: str | Path = ".", check_files: str = "eager"
) -> Scene:
    """Validate a parsed manifest and build a :class:`Scene`.

    ``check_files`` is ``"eager"`` (verify referenced files now), ``"lazy"``
    (fail when they are read) or ``"off"``.
    """
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ManifestError(err.message, _pointer(err.absolute_path))
    root = Path(root)
    scale = UNIT_SCALE[data.get("units", "m")]

    frames = []
    seen_frames: set[str] = set()
    for i, fr in enumerate(data["frames"]):
        ptr = f"/frames/{i}"
        if fr["frame_id"] in seen_frames:
            raise ManifestError(f"duplicate frame id {fr['frame_id']!r}", ptr + "/frame_id")
        seen_frames.add(fr["frame_id"])
        try:
            K = CameraIntrinsics(**fr["intrinsics"])
        except ValueError as exc:
            raise ManifestError(str(exc), ptr + "/intrinsics") from None
        try:
            pose = CameraPose(
                np.array(fr["pose"]["rotation"], dtype=float).reshape(3, 3),
                np.array(fr["pose"]["translation"], dtype=float) * scale,
            )
        except ValueError as exc:
            raise ManifestError(str(exc), ptr + "/pose") from None
        frame = Frame(
            frame_id=fr["frame_id"],
            image_ref=fr["image"],
            depth_ref=fr["depth"],
            intrinsics=K,
            pose=pose,
            depth_format=fr.get("depth_format", "png16_mm"),
            timestamp=fr.get("timestamp"),
        )
        if check_files == "eager":
            for key, ref in (("image", frame.image_ref), ("depth", frame.depth_ref)):
                p = Path(ref) if Path(ref).is_absolute() else root / ref
                if not p.exists():
                    raise ManifestError(f"dangling file reference {ref!r}", f"{ptr}/{key}")
        frames.append(frame)

    boxes = []
    seen_boxes: set[str] = set()
    for i, bx in enumerate(data["boxes"]):
        ptr = f"/boxes/{i}"
        if bx["id"] in seen_boxes:
            raise ManifestError(f"duplicate object id {bx['id']!r}", ptr + "/id")
        seen_boxes.add(bx["id"])
        if "rpy" in bx:
            rpy = tuple(bx["rpy"])
        else:
            R = np.array(bx["rotation"], dtype=float).reshape(3, 3)
            if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
                raise ManifestError("rotation is not orthonormal", ptr + "/rotation")
            rpy = matrix_to_euler(R)
        if min(bx["extents"]) <= 0:
            raise ManifestError("non-positive extent", ptr + "/extents")
        try:
            boxes.append(
                ObbBox(
                    id=bx["id"],
                    tag=bx["tag"],
                    center=tuple(c * scale for c in bx["center"]),
                    extents=tuple(e * scale for e in bx["extents"]),
                    rotation=rpy,
                    metric=bx.get("metric", True),
                )
            )
        except ValueError as exc:
            raise ManifestError(str(exc), ptr) from None

    return Scene(
        scene_id=data["scene_id"],
        frames=tuple(frames),
        boxes=tuple(boxes),
        source_tag=data.get("source_tag", "curated"),
        depth_metric=data.get("depth_metric", True),
        root=root,
    )


def scene_to_manifest(scene: Scene) -> dict:
    """Serialize to the manifest schema (meters, boxes as ``rpy``)."""
    return {
        "scene_id": scene.scene_id,
        "units": "m",
        "source_tag": scene.source_tag,
        "depth_metric": scene.depth_metric,
        "frames": [
            {
                "frame_id": f.frame_id,
                "image": f.image_ref,
                "depth": f.depth_ref,
                "depth_format": f.depth_format,
                "timestamp": f.timestamp,
                "intrinsics": {
                    "fx": f.intrinsics.fx,
                    "fy": f.intrinsics.fy,
                    "cx": f.intrinsics.cx,
                    "cy": f.intrinsics.cy,
                    "width": f.intrinsics.width,
                    "height": f.intrinsics.height,
                },
                "pose": {
                    "rotation": [float(v) for v in f.pose.rotation.ravel()],
                    "translation": [float(v) for v in f.pose.translation],
                },
            }
            for f in scene.frames
        ],
        "boxes": [
            {
                "id": b.id,
                "tag": b.tag,
                "center": list(b.center),
                "extents": list(b.extents),
                "rpy": list(b.rotation),
                "metric": b.metric,
            }
            for b in scene.boxes
        ],
    }


def load_scene(manifest_path: str | Path, check_files: str = "eager") -> Scene:
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON: {exc}") from None
    return scene_from_manifest(data, manifest_path.parent, check_files)


def save_scene(scene: Scene, manifest_path: str | Path) -> None:
    Path(manifest_path).write_text(json.dumps(scene_to_manifest(scene), indent=2), encoding="utf-8")


def rebase_scene(scene: Scene, new_root: str | Path) -> Scene:
    """Same scene with file references rewritten relative to ``new_root``."""
    new_root = Path(new_root)

    def rel(ref: str) -> str:
        return Path(os.path.relpath(scene.resolve(ref), new_root)).as_posix()

    frames = tuple(
        dataclasses.replace(f, image_ref=rel(f.image_ref), depth_ref=rel(f.depth_ref)) for f in scene.frames
    )
    return scene.replace(frames=frames, root=new_root)
