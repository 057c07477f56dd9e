"""Corpus statistics: task, sub-task, source and answer-type distributions."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Mapping

from .qa.records import TASKS, QaRecord
from .qa.templates import SUBTASKS, TEMPLATES

ANSWER_TYPES = ("measurement", "count", "choice", "label")
_COUNT = re.compile(r"^\d+$")


def answer_type(rec: QaRecord) -> str:
    if rec.answer.endswith(" m") and rec.options is None:
        return "measurement"
    if _COUNT.match(rec.answer) and rec.options is None:
        return "count"
    if rec.options is not None:
        return "choice"
    return "label"


def compute_stats(records: Iterable[QaRecord], sources: Mapping[str, str] | None = None) -> dict:
    """Counts per task, sub-task, scene, source tag and answer type.

    ``sources`` maps scene ids to source tags; unknown scenes count as "unknown".
    """
    tasks = Counter(dict.fromkeys(TASKS, 0))
    subtasks = Counter(dict.fromkeys(SUBTASKS, 0))
    kinds = Counter(dict.fromkeys(ANSWER_TYPES, 0))
    scenes: Counter = Counter()
    by_source: Counter = Counter()
    total = 0
    for rec in records:
        total += 1
        tasks[rec.task] += 1
        subtasks[rec.subtask] += 1
        kinds[answer_type(rec)] += 1
        scenes[rec.provenance.scene_id] += 1
        by_source[(sources or {}).get(rec.provenance.scene_id, "unknown")] += 1
    return {
        "total": total,
        "tasks": dict(tasks),
        "subtasks": dict(subtasks),
        "scenes": dict(sorted(scenes.items())),
        "sources": dict(sorted(by_source.items())),
        "answer_types": dict(kinds),
    }


def count_structure(stats: dict) -> dict:
    """The seed-independent part of the stats: every count except scene-level detail."""
    return {k: stats[k] for k in ("total", "tasks", "subtasks", "answer_types")}


def format_table(stats: dict) -> str:
    rows = [("task", "subtask", "count")]
    for task in TASKS:
        rows.append((task, "", str(stats["tasks"].get(task, 0))))
        for st in SUBTASKS:
            if TEMPLATES[st].task == task:
                rows.append(("", st, str(stats["subtasks"].get(st, 0))))
    rows.append(("total", "", str(stats["total"])))
    for name in ("sources", "answer_types"):
        for key, n in stats[name].items():
            rows.append((name.replace("_", " "), key, str(n)))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [f"{a:<{widths[0]}}  {b:<{widths[1]}}  {c:>{widths[2]}}".rstrip() for a, b, c in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
