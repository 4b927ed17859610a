"""COCO-format annotation ingestion, the synthetic shapes dataset and run directories."""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .annotations import InstanceAnnotation, SceneAnnotation
from .config import dump_kv, load_kv
from .geometry import BBox, Polygon, points_in_polygon, rasterize
from .model.checkpoint import dumps_checkpoint, loads_checkpoint
from .model.network import ModelParams

__all__ = [
    "SceneAnnotation",
    "SyntheticConfig",
    "generate_synthetic",
    "load_coco",
    "save_coco",
    "load_dataset",
    "save_dataset",
    "persist_run",
    "load_run",
]

PALETTE = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.1),
}
SHAPES = ("rectangle", "triangle", "ellipse")
TRIANGLE_LANDMARKS = ("apex", "base_right", "base_left")


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: int = 64
    min_shapes: int = 1
    max_shapes: int = 3
    shape_types: tuple[str, ...] = SHAPES
    palette: tuple[str, ...] = tuple(PALETTE)
    min_size: float = 0.2
    max_size: float = 0.5
    ellipse_vertices: int = 24
    captions: bool = True
    background: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.min_shapes < 1 or self.max_shapes < self.min_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        if self.image_size < 1:
            raise ValueError("image_size must be >= 1")
        if not 0 < self.min_size <= self.max_size <= 1:
            raise ValueError("need 0 < min_size <= max_size <= 1")
        unknown = set(self.shape_types) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shape types {sorted(unknown)}")


def _shape_polygon(kind: str, y0, x0, h, w, rng, ellipse_vertices) -> list[tuple[float, float]]:
    y1, x1 = y0 + h, x0 + w
    if kind == "rectangle":
        return [(y0, x0), (y0, x1), (y1, x1), (y1, x0)]
    if kind == "triangle":
        apex = x0 + float(rng.uniform(0.0, 1.0)) * w
        return [(y0, apex), (y1, x1), (y1, x0)]
    cy, cx = y0 + h / 2, x0 + w / 2
    angles = 2 * np.pi * np.arange(ellipse_vertices) / ellipse_vertices
    return [(cy - (h / 2) * np.cos(a), cx + (w / 2) * np.sin(a)) for a in angles]


def caption_for(shapes: Sequence[tuple[str, str, float]]) -> list[str]:
    """Template captions; ``shapes`` holds (color, shape name, x center) per instance."""
    ordered = sorted(shapes, key=lambda s: s[2])
    if len(ordered) == 1:
        c, s, _ = ordered[0]
        return [f"a {c} {s}"]
    out = []
    for i in range(len(ordered) - 1):
        (c1, s1, _), (c2, s2, _) = ordered[i], ordered[i + 1]
        out.append(f"a {c1} {s1} left of a {c2} {s2}")
    return out


def generate_synthetic(cfg: SyntheticConfig, n: int) -> list[SceneAnnotation]:
    """``n`` scenes of flat-colored shapes with exact boxes, polygons, triangle landmarks
    and template captions. Deterministic in ``cfg.seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    size = cfg.image_size
    scenes = []
    for idx in range(n):
        count = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
        image = np.full((size, size, 3), cfg.background)
        drawn = []
        for _ in range(count):
            kind_idx = int(rng.integers(len(cfg.shape_types)))
            kind = cfg.shape_types[kind_idx]
            color = cfg.palette[int(rng.integers(len(cfg.palette)))]
            h, w = rng.uniform(cfg.min_size, cfg.max_size, size=2)
            y0 = float(rng.uniform(0.0, 1.0 - h))
            x0 = float(rng.uniform(0.0, 1.0 - w))
            verts = [(min(1.0, max(0.0, y)), min(1.0, max(0.0, x)))
                     for y, x in _shape_polygon(kind, y0, x0, h, w, rng, cfg.ellipse_vertices)]
            poly = Polygon(verts)
            image[rasterize([poly], size, size).bits] = PALETTE[color]
            drawn.append((kind, SHAPES.index(kind), color, poly))
        instances = []
        for k, (kind, class_id, color, poly) in enumerate(drawn):
            kps = None
            if kind == "triangle":
                kps = []
                for vy, vx in poly.vertices:
                    covered = any(
                        points_in_polygon(np.array(vy), np.array(vx), later.vertices)
                        for *_, later in drawn[k + 1 :]
                    )
                    kps.append(None if covered else (vy, vx))
            instances.append(InstanceAnnotation(poly.bounds(), class_id, (poly,), kps))
        captions = []
        if cfg.captions:
            captions = caption_for([(c, s, (p.bounds().xmin + p.bounds().xmax) / 2) for s, _, c, p in drawn])
        scenes.append(SceneAnnotation(size, size, instances, captions, image, image_id=idx + 1))
    return scenes


# -- COCO ---------------------------------------------------------------------------


def _norm(v: float, extent: int) -> float:
    return min(1.0, max(0.0, float(v) / extent))


def load_coco(
    path,
    keypoint_subset: Optional[Sequence[int]] = None,
    tally: Optional[Counter] = None,
) -> list[SceneAnnotation]:
    """Read a COCO-schema annotation file into normalized scenes (pixels not loaded).

    Images referenced by no annotation are omitted. Category ids map to class indices
    in ascending id order. RLE segmentations are skipped and tallied.
    """
    tally = tally if tally is not None else Counter()
    doc = json.loads(Path(path).read_text())
    for key in ("images", "annotations"):
        if not isinstance(doc.get(key), list):
            raise ValueError(f"COCO file lacks a '{key}' array")
    cats = sorted(c["id"] for c in doc.get("categories", []))
    cat_index = {cid: i for i, cid in enumerate(cats)}
    images = {}
    for im in doc["images"]:
        try:
            images[im["id"]] = (int(im["height"]), int(im["width"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"image record {im.get('id')!r}: {exc}") from exc
    scenes: dict[int, SceneAnnotation] = {}

    def scene_for(image_id, rec_id) -> SceneAnnotation:
        if image_id not in images:
            raise ValueError(f"annotation {rec_id}: unknown image_id {image_id!r}")
        if image_id not in scenes:
            h, w = images[image_id]
            scenes[image_id] = SceneAnnotation(h, w, image_id=image_id)
        return scenes[image_id]

    for ann in doc["annotations"]:
        rec = ann.get("id")
        scene = scene_for(ann.get("image_id"), rec)
        if "caption" in ann:
            scene.captions.append(str(ann["caption"]))
            continue
        try:
            scene.instances.append(_coco_instance(ann, scene, cat_index, keypoint_subset, tally))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"annotation {rec}: {exc}") from exc
    for cap in doc.get("captions", []):
        scene_for(cap.get("image_id"), cap.get("id")).captions.append(str(cap["caption"]))
    return [scenes[k] for k in sorted(scenes)]


def _coco_instance(ann, scene, cat_index, keypoint_subset, tally) -> InstanceAnnotation:
    h, w = scene.height, scene.width
    bbox = ann["bbox"]
    if len(bbox) != 4:
        raise ValueError(f"bbox must have 4 numbers, got {bbox!r}")
    x, y, bw, bh = (float(t) for t in bbox)
    if bw < 0 or bh < 0:
        raise ValueError(f"negative bbox size {bbox!r}")
    box = BBox(_norm(y, h), _norm(x, w), _norm(y + bh, h), _norm(x + bw, w))
    if ann["category_id"] not in cat_index:
        raise ValueError(f"unknown category_id {ann['category_id']!r}")
    polygons = []
    seg = ann.get("segmentation")
    if isinstance(seg, dict):
        tally["rle_skipped"] += 1
    elif seg:
        for flat in seg:
            if len(flat) % 2:
                raise ValueError("polygon has an odd number of coordinates")
            if len(flat) < 6:
                tally["short_polygon"] += 1
                continue
            polygons.append(Polygon([(_norm(flat[i + 1], h), _norm(flat[i], w)) for i in range(0, len(flat), 2)]))
    kps = None
    if ann.get("keypoints"):
        flat = ann["keypoints"]
        if len(flat) % 3:
            raise ValueError("keypoints must be [x, y, v] triples")
        triples = [flat[i : i + 3] for i in range(0, len(flat), 3)]
        if keypoint_subset is not None:
            triples = [triples[i] for i in keypoint_subset]
        kps = [(_norm(ky, h), _norm(kx, w)) if v == 2 else None for kx, ky, v in triples]
    return InstanceAnnotation(box, cat_index[ann["category_id"]], tuple(polygons), kps)


def save_coco(
    scenes: Sequence[SceneAnnotation],
    path,
    class_names: Sequence[str] = SHAPES,
    keypoint_names: Sequence[str] = TRIANGLE_LANDMARKS,
) -> None:
    """Write scenes in the COCO schema (pixel units); captions go in a top-level array."""
    images, anns, caps = [], [], []
    for s in scenes:
        images.append({"id": s.image_id, "height": s.height, "width": s.width, "file_name": f"{s.image_id:06d}"})
        for inst in s.instances:
            b = inst.bbox
            rec = {
                "id": len(anns) + 1,
                "image_id": s.image_id,
                "category_id": inst.class_id + 1,
                "bbox": [b.xmin * s.width, b.ymin * s.height, b.width * s.width, b.height * s.height],
                "segmentation": [
                    [c for y, x in p.vertices for c in (x * s.width, y * s.height)] for p in inst.polygons
                ],
                "iscrowd": 0,
                "area": b.area * s.width * s.height,
            }
            if inst.keypoints is not None:
                flat = []
                for kp in inst.keypoints:
                    flat += [0, 0, 0] if kp is None else [kp[1] * s.width, kp[0] * s.height, 2]
                rec["keypoints"] = flat
                rec["num_keypoints"] = sum(kp is not None for kp in inst.keypoints)
            anns.append(rec)
        for c in s.captions:
            caps.append({"id": len(caps) + 1, "image_id": s.image_id, "caption": c})
    cats = [{"id": i + 1, "name": n, "keypoints": list(keypoint_names)} for i, n in enumerate(class_names)]
    doc = {"images": images, "annotations": anns, "categories": cats, "captions": caps}
    Path(path).write_text(json.dumps(doc))


def save_dataset(scenes: Sequence[SceneAnnotation], directory) -> None:
    """``annotations.json`` in COCO schema plus ``images.npz`` keyed by image id."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_coco(scenes, d / "annotations.json")
    arrays = {str(s.image_id): s.image.astype(np.float32) for s in scenes if s.image is not None}
    with open(d / "images.npz", "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(directory, keypoint_subset=None, tally=None) -> list[SceneAnnotation]:
    d = Path(directory)
    scenes = load_coco(d / "annotations.json", keypoint_subset, tally)
    npz = d / "images.npz"
    if npz.exists():
        with np.load(npz) as arrays:
            for s in scenes:
                key = str(s.image_id)
                if key in arrays:
                    s.image = arrays[key].astype(np.float64)
    return scenes


# -- run directories --------------------------------------------------------------

INCOMPLETE = ".incomplete"


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def persist_run(
    directory,
    config: Mapping[str, object],
    params: ModelParams,
    metrics: Iterable[Mapping[str, object]] = (),
) -> dict[str, str]:
    """Write config.cfg, params.ckpt, metrics.jsonl and a MANIFEST of sha256 digests.

    A ``.incomplete`` marker exists for the whole duration of the write and is removed
    only once the manifest is on disk.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    marker = d / INCOMPLETE
    marker.write_text("write in progress\n")
    (d / "config.cfg").write_text(dump_kv(config))
    (d / "params.ckpt").write_bytes(dumps_checkpoint(params))
    with open(d / "metrics.jsonl", "w") as fh:
        for m in metrics:
            fh.write(json.dumps({"step": int(m["step"]), "task": str(m["task"]), "loss": float(m["loss"])}) + "\n")
    manifest = {name: _digest(d / name) for name in ("config.cfg", "params.ckpt", "metrics.jsonl")}
    (d / "MANIFEST").write_text("".join(f"{h}  {name}\n" for name, h in manifest.items()))
    marker.unlink()
    return manifest


def load_run(directory) -> tuple[dict[str, str], ModelParams, list[dict]]:
    d = Path(directory)
    if (d / INCOMPLETE).exists():
        raise ValueError(f"run directory {d} is incomplete")
    manifest_path = d / "MANIFEST"
    if not manifest_path.exists():
        raise ValueError(f"run directory {d} has no MANIFEST")
    for line in manifest_path.read_text().splitlines():
        digest, name = line.split(None, 1)
        if _digest(d / name) != digest:
            raise ValueError(f"digest mismatch for {name} in {d}")
    config = load_kv(d / "config.cfg")
    params = loads_checkpoint((d / "params.ckpt").read_bytes())
    metrics = [json.loads(l) for l in (d / "metrics.jsonl").read_text().splitlines() if l.strip()]
    return config, params, metrics
