"""Per-task example construction: augmentation followed by tokenization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import codecs
from .annotations import SceneAnnotation, Task
from .augment import (
    AffineMap,
    JitterConfig,
    apply_affine,
    crop_region,
    resample_image,
    scale_jitter,
    sequence_augment_detection,
    transform_instance,
    window_map,
)
from .codecs import TokenSequence
from .vocab import Vocabulary

Example = tuple[np.ndarray, TokenSequence]

_IDENTITY = AffineMap(1.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class TaskSettings:
    image_size: int = 64
    jitter: Optional[JitterConfig] = None
    noise_count: int = 0
    max_noise_size: float = 0.5
    keypoint_crop: float = 2.0
    max_len: int = codecs.MAX_SEQ_LEN
    max_polygon_points: int = codecs.MAX_POLYGON_POINTS


def default_settings(image_size: int = 64, max_len: int = codecs.MAX_SEQ_LEN) -> dict[Task, TaskSettings]:
    return {t: TaskSettings(image_size=image_size, max_len=max_len) for t in Task}


def resize(scene: SceneAnnotation, size: int) -> SceneAnnotation:
    if scene.height == size and scene.width == size:
        return scene
    return apply_affine(scene, _IDENTITY, size, size)


def eligible(scene: SceneAnnotation, task: Task) -> bool:
    if scene.image is None:
        return False
    if task is Task.DETECT:
        return True
    if task is Task.SEGMENT:
        return any(i.polygons for i in scene.instances)
    if task is Task.KEYPOINT:
        return any(i.keypoints is not None for i in scene.instances)
    return bool(scene.captions)


def make_example(
    task: Task,
    scene: SceneAnnotation,
    v: Vocabulary,
    rng: np.random.Generator,
    settings: TaskSettings,
    image_augment: bool = True,
) -> Optional[Example]:
    """One (image, sequence) pair for ``task`` or ``None`` when the scene has nothing to offer.

    ``image_augment=False`` restricts augmentation to the sequence level (random
    ordering, noise boxes, polygon start points), as used by data mixing.
    """
    size = settings.image_size
    if task is Task.DETECT:
        if image_augment and settings.jitter is not None:
            scene = scale_jitter(scene, settings.jitter, rng)
        scene = resize(scene, size)
        insts = sequence_augment_detection(scene.instances, rng, settings.noise_count, settings.max_noise_size)
        return scene.image, codecs.encode_detection(insts, v, rng, settings.max_len)
    if task is Task.SEGMENT:
        if image_augment and settings.jitter is not None:
            scene = scale_jitter(scene, settings.jitter, rng)
        scene = resize(scene, size)
        cands = [i for i in scene.instances if i.polygons]
        if not cands:
            return None
        inst = cands[int(rng.integers(len(cands)))]
        seq = codecs.encode_segmentation(inst, v, rng, settings.max_len, settings.max_polygon_points)
        return scene.image, seq
    if task is Task.KEYPOINT:
        cands = [i for i in scene.instances if i.keypoints is not None]
        if not cands:
            return None
        inst = cands[int(rng.integers(len(cands)))]
        region = crop_region(inst.bbox, settings.keypoint_crop)
        m = window_map(region)
        mapped = transform_instance(inst, m)
        if mapped is None:
            return None
        image = resample_image(scene.image, m, size, size)
        return image, codecs.encode_keypoints(mapped, v, settings.max_len)
    if task is Task.CAPTION:
        if not scene.captions:
            return None
        scene = resize(scene, size)
        text = scene.captions[int(rng.integers(len(scene.captions)))]
        return scene.image, codecs.encode_caption(text, v, settings.max_len)
    raise ValueError(f"unknown task {task}")
