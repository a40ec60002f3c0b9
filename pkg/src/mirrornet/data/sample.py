from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..heatmaps import JointCoords


@dataclass
class Sample:
    """One training or test record.

    ``image`` is (3, H, W) float32 in [0, 1]; ``pose`` is in image pixels;
    ``person_bbox`` and ``head_bbox`` are ``(x, y, w, h)`` in image pixels.
    """

    image: np.ndarray
    pose: JointCoords | None
    mask: np.ndarray | None
    person_bbox: tuple
    head_bbox: tuple | None = None
    annotated: bool = False
    sample_id: str = ""
    split: str = "train"
    geometry: Any = None

    def __post_init__(self):
        if self.annotated and self.pose is None:
            raise ValueError(f"sample {self.sample_id!r} is flagged annotated but has no pose")
        if self.person_bbox[2] <= 0 or self.person_bbox[3] <= 0:
            raise ValueError(f"sample {self.sample_id!r}: bbox dims must be positive, got {self.person_bbox}")

    @property
    def person_hw(self) -> tuple[float, float]:
        return float(self.person_bbox[3]), float(self.person_bbox[2])

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]
