"""Marked images: queried objects outlined and labeled on a copy of the frame."""

from __future__ import annotations

import hashlib
import shutil
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy import ndimage

from ..attributes import ObjectFrameIndex
from ..scene_model import Scene
from .records import Anchor, QaRecord


class MarkingError(ValueError):
    pass


def label_color(label: str) -> tuple[int, int, int]:
    """Saturated color derived from the label text alone."""
    h = hashlib.sha256(label.encode("utf-8")).digest()
    rgb = np.array([h[0], h[1], h[2]], dtype=float)
    rgb = 40 + (rgb - rgb.min()) / max(float(np.ptp(rgb)), 1.0) * 215
    return tuple(int(c) for c in rgb)


def label_box(u: int, v: int, label: str) -> tuple[int, int, int, int]:
    """Rectangle covered by the label tag whose top-left is (u, v)."""
    font = ImageFont.load_default()
    _, _, x1, y1 = ImageDraw.Draw(Image.new("RGB", (1, 1))).textbbox((0, 0), label, font=font)
    return u, v, u + x1 + 3, v + y1 + 3


def render_marked_image(
    scene: Scene,
    index: ObjectFrameIndex,
    frame_id: str,
    anchors: Sequence[Anchor],
    out_path: str | Path,
) -> Path:
    """Write a marked copy of ``frame_id``'s image; with no anchors the copy is byte-identical."""
    frame = scene.frame_by_id[frame_id]
    src = scene.resolve(frame.image_ref)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    labels = [a.marker_label for a in anchors]
    if len(set(labels)) != len(labels):
        raise MarkingError("duplicate marker label")
    for a in anchors:
        if a.frame_id != frame_id:
            raise MarkingError(f"anchor {a.marker_label} belongs to frame {a.frame_id!r}")
        if not index.is_visible(frame_id, a.object_id):
            raise MarkingError(f"anchor not visible: {a.object_id!r} in frame {frame_id!r}")
    if not anchors:
        shutil.copyfile(src, out_path)
        return out_path
    try:
        with Image.open(src) as im:
            img = im.convert("RGB")
    except OSError as exc:
        raise MarkingError(f"unreadable image {src}: {exc}") from exc

    font = ImageFont.load_default()
    W, H = img.size
    pixels = np.asarray(img).copy()
    for a in anchors:
        attrs = index.get(a.object_id, frame_id)
        color = label_color(a.marker_label)
        mask = attrs.mask.decode()
        contour = mask & ~ndimage.binary_erosion(mask, border_value=0)
        pixels[contour] = color
    img = Image.fromarray(pixels)
    draw = ImageDraw.Draw(img)
    for a in anchors:
        attrs = index.get(a.object_id, frame_id)
        color = label_color(a.marker_label)
        u0, v0, u1, v1 = attrs.box2d.pixel_bounds(W, H)
        draw.rectangle([u0, v0, max(u0, u1 - 1), max(v0, v1 - 1)], outline=color)
        lu0, lv0, lu1, lv1 = label_box(u0, v0, a.marker_label)
        draw.rectangle([lu0, lv0, lu1 - 1, lv1 - 1], fill=color)
        draw.text((u0 + 1, v0 + 1), a.marker_label, fill=(0, 0, 0), font=font)
    img.save(out_path, format="PNG")
    return out_path


def render_record(scene: Scene, index: ObjectFrameIndex, record: QaRecord, out_dir: str | Path) -> list[Path]:
    """One marked image per referenced frame at ``{out_dir}/marked/{record_id}_{frame}.png``."""
    out = []
    for ref in record.image_refs:
        anchors = [a for a in record.anchors if a.frame_id == ref.frame_id]
        path = Path(out_dir) / "marked" / f"{record.record_id}_{ref.frame_id}.png"
        out.append(render_marked_image(scene, index, ref.frame_id, anchors, path))
    return out
