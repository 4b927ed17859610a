"""Tokenizers and detokenizers for the four tasks.

Encoders produce a full training sequence (prompt + body) with per-token loss
weights. Decoders take a generated suffix (prompt removed) and are total: malformed
output is dropped and counted in an optional ``collections.Counter`` tally rather than
raising.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import InstanceAnnotation, Task
from .geometry import BBox, BinaryMask, KeypointSet, Polygon, dequantize, quantize, rasterize
from .vocab import TokenKind, Vocabulary

MAX_SEQ_LEN = 512
MAX_POLYGON_POINTS = 128
INVISIBLE_WEIGHT = 0.1

_PROMPT_KIND = {
    Task.DETECT: TokenKind.PROMPT_DETECT,
    Task.SEGMENT: TokenKind.PROMPT_SEGMENT,
    Task.KEYPOINT: TokenKind.PROMPT_KEYPOINT,
    Task.CAPTION: TokenKind.PROMPT_CAPTION,
}
_TASK_OF_PROMPT = {v: k for k, v in _PROMPT_KIND.items()}


class SequenceOverflowError(ValueError):
    pass


@dataclass
class TokenSequence:
    ids: list[int]
    weights: list[float]
    prompt_len: int = 0
    task: Optional[Task] = None

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        self.weights = [float(w) for w in self.weights]
        if len(self.ids) != len(self.weights):
            raise ValueError("ids and weights differ in length")
        if any(w < 0 for w in self.weights):
            raise ValueError("loss weights must be >= 0")
        if any(w != 0.0 for w in self.weights[: self.prompt_len]):
            raise ValueError("prompt positions must carry zero weight")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def body(self) -> list[int]:
        return self.ids[self.prompt_len :]

    def to_line(self) -> str:
        tag = self.task.value if self.task is not None else "none"
        parts = [tag, str(self.prompt_len)] + [f"{i}:{w!r}" for i, w in zip(self.ids, self.weights)]
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "TokenSequence":
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"malformed sequence record: {line!r}")
        task = None if parts[0] == "none" else Task(parts[0])
        ids, weights = [], []
        for item in parts[2:]:
            i, w = item.split(":")
            ids.append(int(i))
            weights.append(float(w))
        return cls(ids, weights, int(parts[1]), task)


def write_sequences(seqs: Iterable[TokenSequence], fh) -> None:
    for s in seqs:
        fh.write(s.to_line() + "\n")


def read_sequences(fh) -> list[TokenSequence]:
    return [TokenSequence.from_line(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class TaskPrompt:
    task: Task
    condition: Optional[BBox] = None

    def __post_init__(self):
        needs_box = self.task in (Task.SEGMENT, Task.KEYPOINT)
        if needs_box and self.condition is None:
            raise ValueError(f"{self.task.value} prompts require a condition box")
        if not needs_box and self.condition is not None:
            raise ValueError(f"{self.task.value} prompts take no condition box")

    def ids(self, v: Vocabulary) -> list[int]:
        out = [v.special(_PROMPT_KIND[self.task])]
        if self.condition is not None:
            out += box_tokens(self.condition, v)
        return out

    @classmethod
    def from_ids(cls, ids: Sequence[int], v: Vocabulary) -> "TaskPrompt":
        task = _TASK_OF_PROMPT[v.classify(ids[0])]
        if task in (Task.SEGMENT, Task.KEYPOINT):
            c = dequantize(np.asarray(ids[1:5]), v.num_coord_bins)
            return cls(task, BBox(*c))
        return cls(task)


def prompt_length(task: Task) -> int:
    return 5 if task in (Task.SEGMENT, Task.KEYPOINT) else 1


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    score: float


@dataclass
class DecodedDetection:
    detections: list[Detection] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)


def box_tokens(box: BBox, v: Vocabulary) -> list[int]:
    return [int(t) for t in quantize(np.asarray(box.as_tuple()), v.num_coord_bins)]


def _check_len(n: int, max_len: int) -> None:
    if n > max_len:
        raise SequenceOverflowError(f"sequence length {n} exceeds max_seq_len={max_len}")


def assemble_training_sequence(
    prompt: TaskPrompt, body: TokenSequence, v: Vocabulary, max_len: int = MAX_SEQ_LEN
) -> TokenSequence:
    p = prompt.ids(v)
    _check_len(len(p) + len(body), max_len)
    return TokenSequence(p + body.ids, [0.0] * len(p) + body.weights, len(p), prompt.task)


def _until_eos(ids: Sequence[int], v: Vocabulary) -> list[int]:
    out = []
    for t in ids:
        if int(t) == v.eos_id:
            break
        out.append(int(t))
    return out


def _kind(v: Vocabulary, t: int) -> Optional[TokenKind]:
    if 0 <= t < v.total_size:
        return v.classify(t)
    return None


# -- detection ----------------------------------------------------------------


def encode_detection(
    instances: Sequence[InstanceAnnotation],
    v: Vocabulary,
    rng: np.random.Generator,
    max_len: int = MAX_SEQ_LEN,
) -> TokenSequence:
    order = rng.permutation(len(instances))
    body: list[int] = []
    for idx in order:
        inst = instances[idx]
        cls_tok = v.noise_id if inst.is_noise else v.class_token(inst.class_id)
        body += box_tokens(inst.bbox, v) + [cls_tok]
    body.append(v.eos_id)
    return assemble_training_sequence(
        TaskPrompt(Task.DETECT), TokenSequence(body, [1.0] * len(body)), v, max_len
    )


def decode_detection(
    ids: Sequence[int],
    per_step_probs: Optional[Sequence[float]] = None,
    v: Vocabulary = None,
    tally: Optional[Counter] = None,
) -> DecodedDetection:
    if v is None:
        raise TypeError("a Vocabulary is required")
    tally = tally if tally is not None else Counter()
    toks = _until_eos(ids, v)
    out = DecodedDetection()
    n_full = len(toks) // 5
    if len(toks) % 5:
        tally["incomplete_tuple"] += 1
    for k in range(n_full):
        tup = toks[5 * k : 5 * k + 5]
        if any(_kind(v, t) is not TokenKind.COORD_BIN for t in tup[:4]):
            tally["bad_coordinate"] += 1
            continue
        cls_kind = _kind(v, tup[4])
        if cls_kind is TokenKind.NOISE_CLASS:
            tally["noise_dropped"] += 1
            continue
        if cls_kind is not TokenKind.CLASS_LABEL:
            tally["bad_class"] += 1
            continue
        y0, x0, y1, x1 = dequantize(np.asarray(tup[:4]), v.num_coord_bins)
        if y0 > y1 or x0 > x1:
            tally["swapped_corners"] += 1
        score = 1.0 if per_step_probs is None else float(per_step_probs[5 * k + 4])
        out.detections.append(Detection(BBox.clipped(y0, x0, y1, x1), tup[4] - v.class_base, score))
    return out


# -- segmentation ---------------------------------------------------------------


def downsample_polygons(polygons: Sequence[Polygon], max_points: int = MAX_POLYGON_POINTS) -> list[Polygon]:
    """Uniform-stride vertex reduction so the total vertex count fits ``max_points``."""
    sizes = np.array([len(p) for p in polygons])
    if sizes.sum() <= max_points:
        return list(polygons)
    floor = np.minimum(sizes, 3)
    budget = max_points - floor.sum()
    if budget < 0:
        raise ValueError(f"{len(polygons)} polygons cannot fit in {max_points} vertices")
    spare = sizes - floor
    share = spare * budget / spare.sum()
    keep = floor + np.floor(share).astype(int)
    leftover = max_points - keep.sum()
    keep[np.argsort(-(share - np.floor(share)), kind="stable")[:leftover]] += 1
    out = []
    for p, k in zip(polygons, keep):
        idx = np.linspace(0, len(p), num=int(k), endpoint=False).astype(int)
        out.append(Polygon([p.vertices[i] for i in idx]))
    return out


def serialize_polygons(polygons: Sequence[Polygon], starts: Sequence[int], v: Vocabulary) -> list[int]:
    body: list[int] = []
    for k, (poly, s) in enumerate(zip(polygons, starts)):
        if k:
            body.append(v.separator_id)
        n = len(poly)
        for i in range(n):
            y, x = poly.vertices[(s + i) % n]
            body += [quantize(y, v.num_coord_bins), quantize(x, v.num_coord_bins)]
    body.append(v.eos_id)
    return body


def encode_segmentation(
    inst: InstanceAnnotation,
    v: Vocabulary,
    rng: np.random.Generator,
    max_len: int = MAX_SEQ_LEN,
    max_points: int = MAX_POLYGON_POINTS,
) -> TokenSequence:
    if not inst.polygons:
        raise ValueError("instance has no polygons to encode")
    polys = downsample_polygons(inst.polygons, max_points)
    for p in polys:
        p.validate()
    starts = [int(rng.integers(len(p))) for p in polys]
    body = serialize_polygons(polys, starts, v)
    return assemble_training_sequence(
        TaskPrompt(Task.SEGMENT, inst.bbox), TokenSequence(body, [1.0] * len(body)), v, max_len
    )


def decode_polygons(ids: Sequence[int], v: Vocabulary, tally: Optional[Counter] = None) -> list[Polygon]:
    tally = tally if tally is not None else Counter()
    groups: list[list[int]] = [[]]
    for t in _until_eos(ids, v):
        kind = _kind(v, t)
        if kind is TokenKind.SEPARATOR:
            groups.append([])
        elif kind is TokenKind.COORD_BIN:
            groups[-1].append(t)
        else:
            tally["non_coordinate_token"] += 1
    polys = []
    for g in groups:
        if len(g) % 2:
            tally["unpaired_coordinate"] += 1
            g = g[:-1]
        if not g and len(groups) == 1:
            continue
        if len(g) < 6:
            tally["short_polygon"] += 1
            continue
        c = dequantize(np.asarray(g), v.num_coord_bins).reshape(-1, 2)
        polys.append(Polygon(c))
    return polys


def decode_segmentation_sample(
    ids: Sequence[int], v: Vocabulary, h: int, w: int, tally: Optional[Counter] = None
) -> BinaryMask:
    return rasterize(decode_polygons(ids, v, tally), h, w)


def vote_masks(samples: Sequence[BinaryMask]) -> BinaryMask:
    """Pixel is on when it is on in strictly more than half of the samples."""
    if not samples:
        raise ValueError("need at least one mask to vote")
    shape = samples[0].bits.shape
    for m in samples:
        if m.bits.shape != shape:
            raise ValueError(f"mask shape mismatch: {m.bits.shape} vs {shape}")
    counts = np.sum([m.bits for m in samples], axis=0, dtype=np.int64)
    return BinaryMask(shape[0], shape[1], 2 * counts > len(samples))


# -- keypoints ----------------------------------------------------------------


def encode_keypoints(
    inst: InstanceAnnotation,
    v: Vocabulary,
    max_len: int = MAX_SEQ_LEN,
    invisible_weight: float = INVISIBLE_WEIGHT,
) -> TokenSequence:
    if inst.keypoints is None:
        raise ValueError("instance has no keypoint set")
    if len(inst.keypoints) != v.keypoint_count:
        raise ValueError(f"expected {v.keypoint_count} keypoints, got {len(inst.keypoints)}")
    ids: list[int] = []
    weights: list[float] = []
    for kp in inst.keypoints:
        if kp is None:
            ids += [v.invisible_id, v.invisible_id]
            weights += [invisible_weight, invisible_weight]
        else:
            ids += [quantize(kp[0], v.num_coord_bins), quantize(kp[1], v.num_coord_bins)]
            weights += [1.0, 1.0]
    ids.append(v.eos_id)
    weights.append(1.0)
    return assemble_training_sequence(
        TaskPrompt(Task.KEYPOINT, inst.bbox), TokenSequence(ids, weights), v, max_len
    )


def decode_keypoints(ids: Sequence[int], v: Vocabulary, tally: Optional[Counter] = None) -> KeypointSet:
    tally = tally if tally is not None else Counter()
    toks = [int(t) for t in ids]
    k = v.keypoint_count
    if len(toks) == 2 * k + 1 and toks[-1] == v.eos_id:
        toks = toks[:-1]
    if len(toks) != 2 * k:
        raise ValueError(f"keypoint suffix must hold {2 * k} tokens, got {len(toks)}")
    out: KeypointSet = []
    for j in range(k):
        a, b = toks[2 * j], toks[2 * j + 1]
        kinds = (_kind(v, a), _kind(v, b))
        if kinds == (TokenKind.COORD_BIN, TokenKind.COORD_BIN):
            out.append((dequantize(a, v.num_coord_bins), dequantize(b, v.num_coord_bins)))
        else:
            if TokenKind.INVISIBLE not in kinds:
                tally["bad_keypoint_token"] += 1
            out.append(None)
    return out


# -- captions ----------------------------------------------------------------


def encode_caption(
    text: str, v: Vocabulary, max_len: int = MAX_SEQ_LEN, tally: Optional[Counter] = None
) -> TokenSequence:
    if not text:
        raise ValueError("caption text must be non-empty")
    tally = tally if tally is not None else Counter()
    data = text.encode("utf-8", errors="surrogateescape")
    if max(data) >= v.config.num_text_tokens:
        raise ValueError(f"byte-level captions need >= 256 text tokens, vocabulary has {v.config.num_text_tokens}")
    room = max_len - prompt_length(Task.CAPTION) - 1
    if len(data) > room:
        tally["caption_truncated"] += 1
        data = data[:room]
    body = [v.text_base + b for b in data] + [v.eos_id]
    return assemble_training_sequence(
        TaskPrompt(Task.CAPTION), TokenSequence(body, [1.0] * len(body)), v, max_len
    )


def decode_caption(ids: Sequence[int], v: Vocabulary, tally: Optional[Counter] = None) -> str:
    """Bytes of the caption as a str; undecodable bytes survive via surrogate escapes."""
    tally = tally if tally is not None else Counter()
    out = bytearray()
    text = v.range_of(TokenKind.TEXT_TOKEN)
    for t in _until_eos(ids, v):
        if t in text and t - text.start < 256:
            out.append(t - text.start)
        else:
            tally["non_text_token"] += 1
    return out.decode("utf-8", errors="surrogateescape")
