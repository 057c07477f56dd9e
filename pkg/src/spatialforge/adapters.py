"""Boundaries to external segmenters and recognizers.

Nothing here runs a model: masks and detections come either from files
precomputed offline or from an HTTP service speaking the JSON contracts below.

Refinement service::

    POST {url}/refine
    {"image_path": str, "prompt": {"type": "box2d" | "mask" | "points", "data": ...}}
    -> {"rle": [int, ...], "width": int, "height": int}

Detection service::

    POST {url}/detect  {"frame_id": str, "image_path": str}
    -> {"frame_id": str, "detections": [{"tag", "confidence", "mask_rle"}]}
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from .masks import InstanceMask, read_mask_png


class RefinementError(RuntimeError):
    pass


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefinementRequest:
    scene_id: str
    frame_id: str
    object_id: str
    image_path: str
    width: int
    height: int
    prompt_type: str  # "box2d" | "mask" | "points"
    prompt_data: Any


class MaskRefinementAdapter(Protocol):
    def refine(self, request: RefinementRequest) -> InstanceMask | None: ...


class NullRefiner:
    def refine(self, request: RefinementRequest) -> InstanceMask | None:
        return None


class FileRefiner:
    """Reads ``{root}/{scene_id}/{frame_id}/{object_id}.png``; a missing file means no refinement."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def refine(self, request: RefinementRequest) -> InstanceMask | None:
        path = self.root / request.scene_id / request.frame_id / f"{request.object_id}.png"
        if not path.exists():
            return None
        return read_mask_png(path)


def _post_json(url: str, payload: dict, timeout: float, retries: int) -> dict:
    import requests

    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
            if attempt < retries:
                time.sleep(min(0.05 * 2**attempt, 1.0))
    raise AdapterError(f"request to {url} failed: {last}")


class ServiceRefiner:
    def __init__(self, url: str, timeout: float = 10.0, retries: int = 2, max_in_flight: int = 4) -> None:
        self.url = url.rstrip("/") + "/refine"
        self.timeout = timeout
        self.retries = retries
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def refine(self, request: RefinementRequest) -> InstanceMask | None:
        payload = {
            "image_path": request.image_path,
            "prompt": {"type": request.prompt_type, "data": request.prompt_data},
        }
        with self._slots:
            try:
                body = _post_json(self.url, payload, self.timeout, self.retries)
            except AdapterError as exc:
                raise RefinementError(str(exc)) from None
        try:
            mask = InstanceMask(int(body["width"]), int(body["height"]), tuple(int(c) for c in body["rle"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise RefinementError(f"malformed refinement response: {exc}") from None
        return mask


def refine_mask(adapter: MaskRefinementAdapter | None, request: RefinementRequest) -> InstanceMask | None:
    """Ask the adapter for a refined mask; raises :class:`RefinementError` on contract violations."""
    if adapter is None:
        return None
    mask = adapter.refine(request)
    if mask is None:
        return None
    if (mask.width, mask.height) != (request.width, request.height):
        raise RefinementError(
            f"refined mask is {mask.width}x{mask.height}, image is {request.width}x{request.height}"
        )
    return mask


# ---------------------------------------------------------------------------
# detections (lifting front-end)


@dataclass(frozen=True)
class ViewDetection:
    frame_id: str
    tag: str
    confidence: float
    mask: InstanceMask


def parse_detections(data: dict, base: Path | None = None) -> list[ViewDetection]:
    frame_id = data["frame_id"]
    out = []
    for det in data.get("detections", []):
        if "mask_rle" in det:
            mask = InstanceMask.from_json(det["mask_rle"])
        elif "mask_png" in det:
            p = Path(det["mask_png"])
            mask = read_mask_png(p if p.is_absolute() or base is None else base / p)
        else:
            raise AdapterError(f"detection in frame {frame_id!r} has no mask")
        conf = float(det.get("confidence", 1.0))
        if not 0.0 <= conf <= 1.0:
            raise AdapterError(f"confidence {conf} outside [0, 1]")
        out.append(ViewDetection(frame_id, det["tag"], conf, mask))
    return out


def detections_to_json(frame_id: str, detections: list[ViewDetection]) -> dict:
    return {
        "frame_id": frame_id,
        "detections": [
            {"tag": d.tag, "confidence": d.confidence, "mask_rle": d.mask.to_json()} for d in detections
        ],
    }


class FileDetections:
    """Per-frame ``{root}/{frame_id}.json`` files."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def detect(self, frame_id: str, image_path: str) -> list[ViewDetection]:
        path = self.root / f"{frame_id}.json"
        if not path.exists():
            return []
        return parse_detections(json.loads(path.read_text()), self.root)


class ServiceDetections:
    def __init__(self, url: str, timeout: float = 10.0, retries: int = 2) -> None:
        self.url = url.rstrip("/") + "/detect"
        self.timeout = timeout
        self.retries = retries

    def detect(self, frame_id: str, image_path: str) -> list[ViewDetection]:
        body = _post_json(self.url, {"frame_id": frame_id, "image_path": image_path}, self.timeout, self.retries)
        return parse_detections(body)


def make_refiner(config) -> MaskRefinementAdapter | None:
    """Build the refinement adapter described by an ``AdapterConfig``."""
    if config.refine == "none":
        return None
    if config.refine == "file":
        if not config.refine_path:
            raise ValueError("adapters.refine_path is required for the file refiner")
        return FileRefiner(config.refine_path)
    if not config.refine_url:
        raise ValueError("adapters.refine_url is required for the service refiner")
    return ServiceRefiner(config.refine_url, config.timeout, config.retries, config.max_in_flight)


def make_detector(config, default_root: str | Path | None = None):
    if config.detect == "service":
        if not config.detect_url:
            raise ValueError("adapters.detect_url is required for the detection service")
        return ServiceDetections(config.detect_url, config.timeout, config.retries)
    root = config.detect_path or default_root
    if root is None:
        raise ValueError("adapters.detect_path is required for file detections")
    return FileDetections(root)
