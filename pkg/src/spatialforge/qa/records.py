"""QA record type and its JSON-lines wire format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

TASKS = ("SM", "SR", "CP", "MC", "SAR")


@dataclass(frozen=True)
class Anchor:
    frame_id: str
    object_id: str
    marker_label: str


@dataclass(frozen=True)
class ImageRef:
    frame_id: str
    path: str


@dataclass(frozen=True)
class Provenance:
    scene_id: str
    template_id: str
    seed: int


@dataclass(frozen=True)
class QaRecord:
    record_id: str
    task: str
    subtask: str
    question: str
    answer: str
    options: tuple[str, ...] | None
    anchors: tuple[Anchor, ...]
    image_refs: tuple[ImageRef, ...]
    provenance: Provenance

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "task": self.task,
            "subtask": self.subtask,
            "question": self.question,
            "answer": self.answer,
            "options": None if self.options is None else list(self.options),
            "anchors": [
                {"frame_id": a.frame_id, "object_id": a.object_id, "marker_label": a.marker_label}
                for a in self.anchors
            ],
            "image_refs": [{"frame_id": r.frame_id, "path": r.path} for r in self.image_refs],
            "provenance": {
                "scene_id": self.provenance.scene_id,
                "template_id": self.provenance.template_id,
                "seed": self.provenance.seed,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "QaRecord":
        return cls(
            record_id=data["record_id"],
            task=data["task"],
            subtask=data["subtask"],
            question=data["question"],
            answer=data["answer"],
            options=None if data.get("options") is None else tuple(data["options"]),
            anchors=tuple(Anchor(**a) for a in data["anchors"]),
            image_refs=tuple(ImageRef(**r) for r in data["image_refs"]),
            provenance=Provenance(**data["provenance"]),
        )

    @property
    def frame_ids(self) -> tuple[str, ...]:
        return tuple(r.frame_id for r in self.image_refs)

    def anchor(self, label: str, frame_id: str | None = None) -> Anchor:
        for a in self.anchors:
            if a.marker_label == label and (frame_id is None or a.frame_id == frame_id):
                return a
        raise KeyError(label)


def canonical_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def content_id(payload: dict) -> str:
    """SHA-256 over the canonical serialization, ``record_id`` excluded."""
    body = {k: v for k, v in payload.items() if k != "record_id"}
    return hashlib.sha256(canonical_bytes(body)).hexdigest()


def make_record(
    task: str,
    subtask: str,
    question: str,
    answer: str,
    options: Iterable[str] | None,
    anchors: Iterable[Anchor],
    image_refs: Iterable[ImageRef],
    provenance: Provenance,
) -> QaRecord:
    rec = QaRecord(
        "",
        task,
        subtask,
        question,
        answer,
        None if options is None else tuple(options),
        tuple(anchors),
        tuple(image_refs),
        provenance,
    )
    return QaRecord(content_id(rec.to_json()), *[getattr(rec, f) for f in list(rec.__dataclass_fields__)[1:]])


def record_line(rec: QaRecord) -> str:
    return json.dumps(rec.to_json(), ensure_ascii=False, separators=(",", ":"))


def write_jsonl(records: Iterable[QaRecord], path: str | Path) -> int:
    """Write records sorted by ``record_id``; returns the count."""
    recs = sorted(records, key=lambda r: r.record_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in recs:
            fh.write(record_line(rec) + "\n")
    return len(recs)


def read_jsonl(path: str | Path) -> Iterator[QaRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield QaRecord.from_json(json.loads(line))
