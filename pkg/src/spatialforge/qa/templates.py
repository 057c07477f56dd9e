"""Sub-task roster and question paraphrases.

Slots: ``{a}``/``{b}``/``{c}`` are marker labels, ``{ta}``/``{tb}``/``{tc}`` the
matching object tags. A template's answer rule lives in ``synth`` and is
recomputed independently by ``oracle``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass


@dataclass(frozen=True)
class TaskTemplate:
    subtask: str
    task: str
    answer_kind: str  # numeric, choice or label
    views: int
    paraphrases: tuple[str, ...]

    def question(self, seed: int, **slots: str) -> str:
        text = random.Random(seed).choice(self.paraphrases)
        return text.format(**slots)


def _t(subtask, task, kind, views, *paraphrases):
    return TaskTemplate(subtask, task, kind, views, tuple(paraphrases))


_ROSTER = (
    # spatial measurement
    _t(
        "sm_object_height", "SM", "numeric", 1,
        "How tall is the {ta} marked {a}, in meters?",
        "What is the height of the {ta} labeled {a}?",
        "Estimate the vertical size of the marked {ta} ({a}) in meters.",
    ),
    _t(
        "sm_object_width", "SM", "numeric", 1,
        "How wide is the {ta} marked {a}, in meters?",
        "What is the width (shorter horizontal side) of the {ta} labeled {a}?",
        "Estimate the width of the marked {ta} ({a}) in meters.",
    ),
    _t(
        "sm_object_length", "SM", "numeric", 1,
        "How long is the {ta} marked {a}, in meters?",
        "What is the length (longer horizontal side) of the {ta} labeled {a}?",
        "Estimate the length of the marked {ta} ({a}) in meters.",
    ),
    _t(
        "sm_object_distance", "SM", "numeric", 1,
        "How far apart are the {ta} marked {a} and the {tb} marked {b}?",
        "What is the distance in meters between object {a} ({ta}) and object {b} ({tb})?",
        "Measure the distance from the {ta} labeled {a} to the {tb} labeled {b}.",
    ),
    _t(
        "sm_camera_distance", "SM", "numeric", 1,
        "How far is the {ta} marked {a} from the camera?",
        "What is the distance in meters between the camera and the {ta} labeled {a}?",
        "Estimate how many meters separate the viewer from the marked {ta} ({a}).",
    ),
    # spatial relationship
    _t(
        "sr_direction", "SR", "choice", 1,
        "Where is the {ta} marked {a} relative to the {tb} marked {b}?",
        "From the camera's point of view, how is object {a} ({ta}) positioned with respect to object {b} ({tb})?",
        "Describe the position of the {ta} labeled {a} compared with the {tb} labeled {b}.",
    ),
    _t(
        "sr_closer_to_camera", "SR", "choice", 1,
        "Which object is closer to the camera: {a} ({ta}) or {b} ({tb})?",
        "Of the {ta} marked {a} and the {tb} marked {b}, which one is nearer to the viewer?",
        "Is {a} or {b} closer to the camera?",
    ),
    _t(
        "sr_size_compare", "SR", "choice", 1,
        "Which is {adj}: the {ta} marked {a} or the {tb} marked {b}?",
        "Comparing object {a} ({ta}) and object {b} ({tb}), which one is {adj}?",
        "Between {a} and {b}, which object is {adj}?",
    ),
    _t(
        "sr_vertical", "SR", "choice", 1,
        "Is the {ta} marked {a} above or below the {tb} marked {b}?",
        "Vertically, where does object {a} ({ta}) sit relative to object {b} ({tb})?",
        "Is {a} higher or lower than {b}?",
    ),
    # camera perception
    _t(
        "cp_object_bearing", "CP", "choice", 1,
        "Is the {ta} marked {a} on the left, in the center, or on the right of the image?",
        "In which part of the view does the {ta} labeled {a} appear?",
        "Relative to the image center, where is object {a} ({ta})?",
    ),
    _t(
        "cp_distance_class", "CP", "choice", 1,
        "Is the {ta} marked {a} near, at a medium distance, or far from the camera?",
        "How would you describe the distance between the camera and the {ta} labeled {a}?",
        "Classify how far object {a} ({ta}) is from the viewer.",
    ),
    _t(
        "cp_camera_rotation", "CP", "choice", 2,
        "Between the first and second image, did the camera turn left, turn right, or not rotate?",
        "How did the camera rotate from the first view to the second?",
        "Going from view 1 to view 2, which way did the camera turn?",
    ),
    _t(
        "cp_camera_movement", "CP", "choice", 2,
        "In which direction did the camera move between the first and second image?",
        "From view 1 to view 2, how was the camera translated?",
        "Which best describes the camera's movement from the first view to the second?",
    ),
    # multi-view consistency
    _t(
        "mc_reidentify", "MC", "choice", 2,
        "The {ta} marked {a} in the first image appears in the second image. Which marked object is it?",
        "Which candidate in the second view is the same {ta} as object {a} in the first view?",
        "Find object {a} ({ta}) from the first image among the numbered objects in the second image.",
    ),
    _t(
        "mc_shared_count", "MC", "numeric", 2,
        "How many objects are visible in both images?",
        "Count the objects that appear in both the first and the second view.",
        "How many distinct objects do the two views have in common?",
    ),
    _t(
        "mc_presence", "MC", "label", 2,
        "Is the {ta} marked {a} in the first image also visible in the second image?",
        "Can object {a} ({ta}) from the first view be seen in the second view?",
        "Does the second image show the {ta} labeled {a} in the first image?",
    ),
    # scene-aware reasoning
    _t(
        "sar_nearest_object", "SAR", "choice", 1,
        "Which of the marked objects {b}, {c} and {d} is closest to the {ta} marked {a}?",
        "Among {b}, {c} and {d}, which object is nearest to object {a} ({ta})?",
        "Find the object closest to the {ta} labeled {a}: {b}, {c} or {d}?",
    ),
    _t(
        "sar_category_count", "SAR", "numeric", 1,
        "How many objects of the same category as the {ta} marked {a} are there in the whole scene?",
        "Counting the entire room, how many {ta} objects like {a} exist?",
        "In the full scene, how many instances share the category of object {a}?",
    ),
    _t(
        "sar_left_to_right_order", "SAR", "choice", 1,
        "List the marked objects {a}, {b} and {c} from left to right.",
        "What is the left-to-right order of objects {a}, {b} and {c} in the image?",
        "Order {a}, {b} and {c} as they appear from left to right.",
    ),
    _t(
        "sar_traversability", "SAR", "label", 1,
        "Can you walk on the floor from the {ta} marked {a} to the {tb} marked {b} without passing through other objects?",
        "Is there a free path on the floor between object {a} ({ta}) and object {b} ({tb})?",
        "Starting at the {ta} labeled {a}, is the {tb} labeled {b} reachable without crossing any other object?",
    ),
)

TEMPLATES: dict[str, TaskTemplate] = {t.subtask: t for t in _ROSTER}
SUBTASKS: tuple[str, ...] = tuple(TEMPLATES)
