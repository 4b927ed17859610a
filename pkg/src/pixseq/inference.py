"""Prompting a trained estimator and de-tokenizing its output per task."""
from __future__ import annotations

from collections import Counter
from typing import Optional, Sequence

import numpy as np

from . import codecs
from .annotations import InstanceAnnotation, SceneAnnotation, Task
from .augment import crop_region, resample_image, uncrop_point, window_map
from .codecs import DecodedDetection, TaskPrompt
from .geometry import BBox, BinaryMask, KeypointSet
from .model.sampling import NextTokenEstimator, SamplerConfig, generate, generate_parallel
from .tasks import resize
from .vocab import Vocabulary


def detect(est, scene: SceneAnnotation, v: Vocabulary, cfg: SamplerConfig, rng, image_size: int,
           tally: Optional[Counter] = None) -> DecodedDetection:
    image = resize(scene, image_size).image
    ids, probs = generate(est, image, TaskPrompt(Task.DETECT), cfg, rng, v)
    return codecs.decode_detection(ids, probs, v, tally)


def segment(est, scene: SceneAnnotation, box: BBox, v: Vocabulary, cfg: SamplerConfig, rng,
            image_size: int, samples: int = 8, tally: Optional[Counter] = None) -> BinaryMask:
    """Draw ``samples`` polygon sequences for the instance in ``box`` and majority-vote
    their masks at the scene's resolution."""
    image = resize(scene, image_size).image
    outs = generate_parallel(est, image, [TaskPrompt(Task.SEGMENT, box)] * samples, cfg, rng, v)
    masks = [codecs.decode_segmentation_sample(ids, v, scene.height, scene.width, tally) for ids, _ in outs]
    return codecs.vote_masks(masks)


def keypoints(est, scene: SceneAnnotation, box: BBox, v: Vocabulary, cfg: SamplerConfig, rng,
              image_size: int, crop_factor: float = 2.0) -> KeypointSet:
    """Keypoints for the instance in ``box``, predicted on a crop and mapped back to the scene."""
    region = crop_region(box, crop_factor)
    m = window_map(region)
    image = resample_image(scene.image, m, image_size, image_size)
    y0, x0 = m.point(box.ymin, box.xmin)
    y1, x1 = m.point(box.ymax, box.xmax)
    ids, _ = generate(est, image, TaskPrompt(Task.KEYPOINT, BBox.clipped(y0, x0, y1, x1)), cfg, rng, v)
    kps = codecs.decode_keypoints(ids, v)
    return [None if k is None else uncrop_point(k, region) for k in kps]


def caption(est, scene: SceneAnnotation, v: Vocabulary, cfg: SamplerConfig, rng, image_size: int,
            tally: Optional[Counter] = None) -> str:
    image = resize(scene, image_size).image
    ids, _ = generate(est, image, TaskPrompt(Task.CAPTION), cfg, rng, v)
    return codecs.decode_caption(ids, v, tally)
