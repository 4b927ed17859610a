"""Ground-truth containers shared by codecs, augmentation and data loading."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import BBox, KeypointSet, Polygon


class Task(str, enum.Enum):
    DETECT = "detect"
    SEGMENT = "segment"
    KEYPOINT = "keypoint"
    CAPTION = "caption"


@dataclass(frozen=True)
class InstanceAnnotation:
    bbox: BBox
    class_id: int
    polygons: tuple[Polygon, ...] = ()
    keypoints: Optional[tuple] = None  # tuple of (y, x) or None per landmark
    is_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))
        if self.keypoints is not None:
            object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if self.is_noise and (self.polygons or self.keypoints is not None):
            raise ValueError("noise instances carry no polygons or keypoints")

    def with_(self, **changes) -> "InstanceAnnotation":
        return replace(self, **changes)


@dataclass
class SceneAnnotation:
    height: int
    width: int
    instances: list[InstanceAnnotation] = field(default_factory=list)
    captions: list[str] = field(default_factory=list)
    image: Optional[np.ndarray] = None  # (height, width, channels) float in [0, 1]
    image_id: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("scene height and width must be >= 1")
        if self.image is not None and self.image.shape[:2] != (self.height, self.width):
            raise ValueError(f"image shape {self.image.shape} does not match {self.height}x{self.width}")


def keypoints_list(kps) -> KeypointSet:
    return [None if k is None else (float(k[0]), float(k[1])) for k in kps]
