"""Coordinate quantization, polygon rasterization and overlap measures.

All coordinates are normalized to [0, 1] and ordered (y, x).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

Point = tuple[float, float]
# A keypoint is either a (y, x) pair or None for an occluded / invisible landmark.
Keypoint = Optional[Point]
KeypointSet = list  # list[Keypoint], fixed length K

OCCLUDED = None


@dataclass(frozen=True)
class BBox:
    ymin: float
    xmin: float
    ymax: float
    xmax: float

    def __post_init__(self):
        vals = (self.ymin, self.xmin, self.ymax, self.xmax)
        if not all(0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"box coordinates must lie in [0, 1]: {vals}")
        if self.ymin > self.ymax or self.xmin > self.xmax:
            raise ValueError(f"box has min > max: {vals}")

    @property
    def area(self) -> float:
        return (self.ymax - self.ymin) * (self.xmax - self.xmin)

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.ymin, self.xmin, self.ymax, self.xmax)

    def as_polygon(self) -> "Polygon":
        return Polygon(
            [(self.ymin, self.xmin), (self.ymin, self.xmax), (self.ymax, self.xmax), (self.ymax, self.xmin)]
        )

    @classmethod
    def clipped(cls, ymin, xmin, ymax, xmax) -> "BBox":
        """Build a box after clamping every coordinate into [0, 1] and sorting min/max."""
        y0, y1 = sorted((_clamp01(ymin), _clamp01(ymax)))
        x0, x1 = sorted((_clamp01(xmin), _clamp01(xmax)))
        return cls(y0, x0, y1, x1)


@dataclass(frozen=True)
class Polygon:
    vertices: tuple[Point, ...]

    def __init__(self, vertices: Sequence[Sequence[float]]):
        verts = tuple((float(y), float(x)) for y, x in vertices)
        object.__setattr__(self, "vertices", verts)

    def __len__(self) -> int:
        return len(self.vertices)

    def validate(self) -> None:
        if len(self.vertices) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(self.vertices)}")
        if not all(0.0 <= c <= 1.0 for v in self.vertices for c in v):
            raise ValueError("polygon vertices must lie in [0, 1]")

    def bounds(self) -> BBox:
        arr = np.asarray(self.vertices)
        return BBox(arr[:, 0].min(), arr[:, 1].min(), arr[:, 0].max(), arr[:, 1].max())


@dataclass
class BinaryMask:
    height: int
    width: int
    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.height, self.width):
            raise ValueError(f"mask grid shape {self.bits.shape} != ({self.height}, {self.width})")

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, np.zeros((height, width), dtype=bool))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def to_pbm(self) -> bytes:
        header = f"P4\n{self.width} {self.height}\n".encode("ascii")
        return header + np.packbits(self.bits, axis=1).tobytes()

    @classmethod
    def from_pbm(cls, data: bytes) -> "BinaryMask":
        tokens = []
        pos = 0
        # header: magic, width, height separated by whitespace, then one whitespace byte
        while len(tokens) < 3:
            while data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            start = pos
            while not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        pos += 1
        if tokens[0] != b"P4":
            raise ValueError("not a binary PBM (P4) file")
        width, height = int(tokens[1]), int(tokens[2])
        row_bytes = (width + 7) // 8
        packed = np.frombuffer(data[pos : pos + row_bytes * height], dtype=np.uint8)
        if packed.size != row_bytes * height:
            raise ValueError("truncated PBM payload")
        bits = np.unpackbits(packed.reshape(height, row_bytes), axis=1)[:, :width]
        return cls(height, width, bits.astype(bool))


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, float(v)))


def quantize(v, nbins: int):
    """Map a normalized coordinate to its bin index, ``min(floor(v * nbins), nbins - 1)``.

    Accepts scalars or arrays; arrays return an int64 array.
    """
    if nbins < 2:
        raise ValueError("nbins must be >= 2")
    arr = np.asarray(v, dtype=np.float64)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError(f"coordinate outside [0, 1]: {v}")
    out = np.minimum(np.floor(arr * nbins).astype(np.int64), nbins - 1)
    return int(out) if out.ndim == 0 else out


def dequantize(b, nbins: int):
    """Bin center of bin ``b``: ``(b + 0.5) / nbins``."""
    if nbins < 2:
        raise ValueError("nbins must be >= 2")
    arr = np.asarray(b)
    if np.any((arr < 0) | (arr >= nbins)):
        raise ValueError(f"bin index outside [0, {nbins}): {b}")
    out = (arr.astype(np.float64) + 0.5) / nbins
    return float(out) if out.ndim == 0 else out


def points_in_polygon(ys: np.ndarray, xs: np.ndarray, vertices: Sequence[Point]) -> np.ndarray:
    """Even-odd test of query points against one polygon.

    A ray is cast towards +x and crossings at or beyond the query count, so points
    lying exactly on a right-hand boundary are inside.
    """
    inside = np.zeros(np.broadcast(ys, xs).shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        y1, x1 = vertices[i]
        y2, x2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        straddles = (y1 > ys) != (y2 > ys)
        x_cross = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (xs <= x_cross)
    return inside


def rasterize(polygons: Sequence[Polygon], h: int, w: int) -> BinaryMask:
    """Union of polygons sampled at pixel centers under the even-odd rule."""
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be >= 1")
    ys = ((np.arange(h) + 0.5) / h)[:, None]
    xs = ((np.arange(w) + 0.5) / w)[None, :]
    bits = np.zeros((h, w), dtype=bool)
    for poly in polygons:
        if len(poly.vertices) < 3:
            raise ValueError(f"degenerate polygon with {len(poly.vertices)} vertices")
        bits |= points_in_polygon(ys, xs, poly.vertices)
    return BinaryMask(h, w, bits)


def box_iou(a: BBox, b: BBox) -> float:
    ih = max(0.0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    iw = max(0.0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    inter = ih * iw
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shape mismatch: {a.bits.shape} vs {b.bits.shape}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return np.count_nonzero(a.bits & b.bits) / union
