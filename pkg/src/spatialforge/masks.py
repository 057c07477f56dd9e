"""Run-length encoded binary instance masks.

Runs are taken over the row-major flattened grid and always start with a
run of zeros (possibly of length 0), alternating thereafter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class InstanceMask:
    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 0 or self.height < 0:
            raise ValueError("mask dimensions must be non-negative")
        if any(c < 0 for c in self.counts):
            raise ValueError("run lengths must be non-negative")
        if sum(self.counts) != self.width * self.height:
            raise ValueError(
                f"run lengths sum to {sum(self.counts)}, expected {self.width * self.height}"
            )

    @classmethod
    def encode(cls, mask: np.ndarray) -> "InstanceMask":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2D")
        height, width = mask.shape
        flat = mask.ravel()
        if flat.size == 0:
            return cls(width, height, ())
        # indices where the value changes, plus both ends
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds)
        if flat[0]:
            runs = np.concatenate(([0], runs))
        return cls(width, height, tuple(int(r) for r in runs))

    @classmethod
    def empty(cls, width: int, height: int) -> "InstanceMask":
        n = width * height
        return cls(width, height, (n,) if n else ())

    def decode(self) -> np.ndarray:
        counts = np.asarray(self.counts, dtype=np.int64)
        values = np.zeros(len(counts), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, counts)
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Inclusive pixel bounds (min_u, min_v, max_u, max_v), or None when empty."""
        grid = self.decode()
        vs, us = np.nonzero(grid)
        if us.size == 0:
            return None
        return int(us.min()), int(vs.min()), int(us.max()), int(vs.max())

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "rle": list(self.counts)}

    @classmethod
    def from_json(cls, data: dict) -> "InstanceMask":
        return cls(int(data["width"]), int(data["height"]), tuple(int(c) for c in data["rle"]))


def read_mask_png(path: str | Path) -> InstanceMask:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return InstanceMask.encode(arr > 0)


def write_mask_png(mask: InstanceMask, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(mask.decode().astype(np.uint8) * 255).save(path)
