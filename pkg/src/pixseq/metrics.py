"""Desk-scale evaluation: greedy-matching AP, keypoint similarity (OKS) and BLEU."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from .geometry import BBox, KeypointSet, box_iou, mask_iou

P = TypeVar("P")
G = TypeVar("G")


@dataclass
class MatchResult:
    scores: list[float]
    matches: list[Optional[int]]  # ground-truth index per prediction, in ranked order
    num_gt: int


def match_image(
    preds: Sequence[tuple[float, P]],
    gts: Sequence[G],
    similarity: Callable[[P, G], float],
    threshold: float,
) -> MatchResult:
    """Rank predictions by score (stable) and greedily take the most similar unmatched gt."""
    if any(not math.isfinite(s) for s, _ in preds):
        raise ValueError("prediction scores must be finite")
    order = sorted(range(len(preds)), key=lambda i: -preds[i][0])
    taken = [False] * len(gts)
    scores, matches = [], []
    for i in order:
        score, item = preds[i]
        best, best_sim = None, -math.inf
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            sim = similarity(item, gt)
            if sim >= threshold and sim > best_sim:
                best, best_sim = j, sim
        if best is not None:
            taken[best] = True
        scores.append(float(score))
        matches.append(best)
    return MatchResult(scores, matches, len(gts))


def ap_from_matches(results: Sequence[MatchResult]) -> float:
    """All-point interpolated area under the pooled precision/recall curve."""
    num_gt = sum(r.num_gt for r in results)
    pooled = [(s, m is not None, k, i) for k, r in enumerate(results) for i, (s, m) in enumerate(zip(r.scores, r.matches))]
    if num_gt == 0:
        return 1.0 if not pooled else 0.0
    if not pooled:
        return 0.0
    pooled.sort(key=lambda t: (-t[0], t[2], t[3]))
    hits = np.array([t[1] for t in pooled], dtype=np.float64)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / num_gt
    # precision envelope: max precision at any later rank
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def average_precision(
    preds: Sequence[tuple[float, P]],
    gts: Sequence[G],
    similarity: Callable[[P, G], float],
    threshold: float,
) -> float:
    return ap_from_matches([match_image(preds, gts, similarity, threshold)])


@dataclass(frozen=True)
class OksConfig:
    falloff: tuple[float, ...]

    def __post_init__(self):
        if any(k <= 0 for k in self.falloff):
            raise ValueError("keypoint falloff constants must be > 0")

    @classmethod
    def uniform(cls, k: int, value: float = 0.1) -> "OksConfig":
        return cls((value,) * k)


# COCO person keypoint sigmas (nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles)
COCO_KEYPOINT_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)


def oks(pred: KeypointSet, gt: KeypointSet, gt_box: BBox, cfg: OksConfig) -> float:
    """Mean over visible ground-truth keypoints of exp(-d^2 / (2 s^2 k^2)), s^2 = box area."""
    if len(pred) != len(gt) or len(gt) != len(cfg.falloff):
        raise ValueError(f"keypoint count mismatch: pred {len(pred)}, gt {len(gt)}, falloff {len(cfg.falloff)}")
    s2 = gt_box.area
    terms = []
    for p, g, k in zip(pred, gt, cfg.falloff):
        if g is None:
            continue
        if p is None or s2 <= 0.0:
            terms.append(0.0)
            continue
        d2 = (p[0] - g[0]) ** 2 + (p[1] - g[1]) ** 2
        terms.append(math.exp(-d2 / (2.0 * s2 * k * k)))
    if not terms:
        return 0.0
    return sum(terms) / len(terms)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Sequence[str], max_n: int = 4) -> float:
    """Sentence BLEU: geometric mean of clipped n-gram precisions times the brevity penalty.

    Whitespace tokenization, lowercased, no smoothing. The effective reference length
    is the one closest to the candidate (shorter wins ties). Candidates shorter than
    ``max_n`` are scored on the orders they have, so a candidate equal to a reference
    always scores 1.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    cand = candidate.lower().split()
    refs = [r.lower().split() for r in references]
    if not cand or not refs:
        return 0.0
    max_n = min(max_n, len(cand))
    log_p = 0.0
    for n in range(1, max_n + 1):
        c = _ngrams(cand, n)
        total = sum(c.values())
        if total == 0:
            return 0.0
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= _ngrams(r, n)
        clipped = sum(min(cnt, max_ref[g]) for g, cnt in c.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total) / max_n
    ref_len = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    bp = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / len(cand))
    return bp * math.exp(log_p)


def mean_bleu(pairs: Sequence[tuple[str, Sequence[str]]], max_n: int = 4) -> float:
    if not pairs:
        return 0.0
    return sum(bleu(c, refs, max_n) for c, refs in pairs) / len(pairs)


def metric_record(task: str, metric: str, value: float, threshold=None) -> str:
    return json.dumps({"task": task, "metric": metric, "value": value, "threshold": threshold}, sort_keys=True)


def _box_class_similarity(pred, gt) -> float:
    if pred.class_id != gt.class_id:
        return 0.0
    return box_iou(pred.box, gt.bbox)


def detection_ap(preds_per_image, gts_per_image, threshold: float = 0.5) -> float:
    """Class-aware box AP pooled over images; noise instances never count as ground truth."""
    results = []
    for preds, gts in zip(preds_per_image, gts_per_image):
        real = [g for g in gts if not g.is_noise]
        results.append(match_image([(d.score, d) for d in preds], real, _box_class_similarity, threshold))
    return ap_from_matches(results)


def mask_ap(preds_per_image, gts_per_image, threshold: float = 0.5) -> float:
    """AP over (score, BinaryMask) predictions against ground-truth BinaryMasks."""
    results = [match_image(p, g, mask_iou, threshold) for p, g in zip(preds_per_image, gts_per_image)]
    return ap_from_matches(results)


def keypoint_ap(preds_per_image, gts_per_image, cfg: OksConfig, threshold: float = 0.5) -> float:
    """AP with OKS similarity; predictions are (score, KeypointSet), ground truths (KeypointSet, BBox)."""

    def sim(pred, gt):
        kps, box = gt
        return oks(pred, kps, box, cfg)

    results = [match_image(p, g, sim, threshold) for p, g in zip(preds_per_image, gts_per_image)]
    return ap_from_matches(results)
