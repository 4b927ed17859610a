"""Geometric augmentations applied consistently to pixels and annotations.

Every transform here is a per-axis affine map of normalized coordinates,
``y' = ay * y + by`` and ``x' = ax * x + bx``, followed by clipping to the output
window. Pixels are resampled nearest-neighbour at output pixel centers so the image
and the annotations always agree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .annotations import InstanceAnnotation, SceneAnnotation
from .geometry import BBox, Polygon

CropRegion = BBox


@dataclass(frozen=True)
class JitterConfig:
    scale_min: float = 0.8
    scale_max: float = 1.2
    out_h: int = 64
    out_w: int = 64

    def __post_init__(self):
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("need 0 < scale_min <= scale_max")


@dataclass(frozen=True)
class AffineMap:
    ay: float
    by: float
    ax: float
    bx: float

    def point(self, y: float, x: float) -> tuple[float, float]:
        return self.ay * y + self.by, self.ax * x + self.bx

    def inverse_point(self, y: float, x: float) -> tuple[float, float]:
        return (y - self.by) / self.ay, (x - self.bx) / self.ax


def resample_image(image: np.ndarray, m: AffineMap, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resampling; pixels mapping outside the source are zero padding."""
    h, w = image.shape[:2]
    v = (np.arange(out_h) + 0.5) / out_h
    u = (np.arange(out_w) + 0.5) / out_w
    src_y = (v - m.by) / m.ay
    src_x = (u - m.bx) / m.ax
    rows = np.floor(src_y * h).astype(np.int64)
    cols = np.floor(src_x * w).astype(np.int64)
    row_ok = (rows >= 0) & (rows < h)
    col_ok = (cols >= 0) & (cols < w)
    out = np.zeros((out_h, out_w) + image.shape[2:], dtype=image.dtype)
    sub = image[np.clip(rows, 0, h - 1)][:, np.clip(cols, 0, w - 1)]
    keep = row_ok[:, None] & col_ok[None, :]
    out[keep] = sub[keep]
    return out


def _clamp(v: float) -> float:
    return min(1.0, max(0.0, v))


def transform_instance(inst: InstanceAnnotation, m: AffineMap) -> Optional[InstanceAnnotation]:
    """Map one instance through ``m``; ``None`` when its clipped box is empty."""
    y0, x0 = m.point(inst.bbox.ymin, inst.bbox.xmin)
    y1, x1 = m.point(inst.bbox.ymax, inst.bbox.xmax)
    box = BBox.clipped(y0, x0, y1, x1)
    if box.area <= 0.0:
        return None
    polys = []
    for p in inst.polygons:
        verts = [tuple(_clamp(c) for c in m.point(y, x)) for y, x in p.vertices]
        clipped = Polygon(verts)
        if clipped.bounds().area > 0.0:
            polys.append(clipped)
    kps = None
    if inst.keypoints is not None:
        kps = []
        for kp in inst.keypoints:
            if kp is None:
                kps.append(None)
                continue
            y, x = m.point(*kp)
            kps.append((y, x) if 0.0 <= y <= 1.0 and 0.0 <= x <= 1.0 else None)
    return inst.with_(bbox=box, polygons=tuple(polys), keypoints=kps)


def apply_affine(scene: SceneAnnotation, m: AffineMap, out_h: int, out_w: int) -> SceneAnnotation:
    instances = [t for t in (transform_instance(i, m) for i in scene.instances) if t is not None]
    image = None if scene.image is None else resample_image(scene.image, m, out_h, out_w)
    return SceneAnnotation(out_h, out_w, instances, list(scene.captions), image, scene.image_id)


def jitter_map(h: int, w: int, scale: float, off_y: float, off_x: float, out_h: int, out_w: int) -> AffineMap:
    """Map for: resize by ``scale`` (aspect kept), then take an out_h x out_w window at pixel offset."""
    ay = h * scale / out_h
    ax = w * scale / out_w
    return AffineMap(ay, -off_y / out_h, ax, -off_x / out_w)


def scale_jitter(scene: SceneAnnotation, cfg: JitterConfig, rng: np.random.Generator) -> SceneAnnotation:
    scale = float(rng.uniform(cfg.scale_min, cfg.scale_max))
    slack_y = max(0, int(np.floor(scene.height * scale - cfg.out_h)))
    slack_x = max(0, int(np.floor(scene.width * scale - cfg.out_w)))
    off_y = int(rng.integers(0, slack_y + 1))
    off_x = int(rng.integers(0, slack_x + 1))
    m = jitter_map(scene.height, scene.width, scale, off_y, off_x, cfg.out_h, cfg.out_w)
    return apply_affine(scene, m, cfg.out_h, cfg.out_w)


def crop_region(box: BBox, factor: float) -> CropRegion:
    if factor <= 0:
        raise ValueError("crop factor must be > 0")
    cy, cx = (box.ymin + box.ymax) / 2, (box.xmin + box.xmax) / 2
    hh, hw = box.height * factor / 2, box.width * factor / 2
    y0, y1 = max(0.0, cy - hh), min(1.0, cy + hh)
    x0, x1 = max(0.0, cx - hw), min(1.0, cx + hw)
    if y1 <= y0 or x1 <= x0:
        raise ValueError(f"crop of {box} with factor {factor} has empty intersection with the image")
    return BBox(y0, x0, y1, x1)


def window_map(region: CropRegion) -> AffineMap:
    ay = 1.0 / region.height
    ax = 1.0 / region.width
    return AffineMap(ay, -region.ymin * ay, ax, -region.xmin * ax)


def uncrop_point(point: tuple[float, float], region: CropRegion) -> tuple[float, float]:
    y, x = point
    return region.ymin + y * region.height, region.xmin + x * region.width


def crop_for_instance(
    scene: SceneAnnotation,
    inst: InstanceAnnotation,
    factor: float = 2.0,
    out_h: Optional[int] = None,
    out_w: Optional[int] = None,
) -> tuple[SceneAnnotation, CropRegion]:
    """Crop around ``inst``'s box scaled by ``factor`` about its center.

    Output size defaults to the crop's own pixel extent.
    """
    region = crop_region(inst.bbox, factor)
    out_h = out_h or max(1, round(region.height * scene.height))
    out_w = out_w or max(1, round(region.width * scene.width))
    return apply_affine(scene, window_map(region), out_h, out_w), region


def sequence_augment_detection(
    instances: list[InstanceAnnotation],
    rng: np.random.Generator,
    noise_count: int = 0,
    max_noise_size: float = 0.5,
) -> list[InstanceAnnotation]:
    """Append ``noise_count`` random noise-class boxes with sides at most ``max_noise_size``."""
    if noise_count < 0:
        raise ValueError("noise_count must be >= 0")
    out = list(instances)
    for _ in range(noise_count):
        h, w = rng.uniform(0.0, max_noise_size, size=2)
        y0 = rng.uniform(0.0, 1.0 - h)
        x0 = rng.uniform(0.0, 1.0 - w)
        out.append(InstanceAnnotation(BBox.clipped(y0, x0, y0 + h, x0 + w), class_id=0, is_noise=True))
    return out
