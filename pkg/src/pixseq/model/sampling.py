"""Grammar-constrained nucleus sampling."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol, Sequence

import numpy as np

from ..annotations import Task
from ..codecs import TaskPrompt
from ..vocab import TokenKind, Vocabulary


class NextTokenEstimator(Protocol):
    def next_token_probs(self, image, prefix: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    p: float = 1.0
    max_len: int = 512
    grammar: bool = True
    # occlusion tokens are legal training targets but are masked out at inference
    allow_invisible: bool = False

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("nucleus mass p must lie in (0, 1]")


def nucleus_filter(dist: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest top-probability set with mass >= p (ties: lower id first), renormalized."""
    dist = np.asarray(dist, dtype=np.float64)
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if p >= 1.0:
        return dist.copy()
    order = np.lexsort((np.arange(dist.size), -dist))
    cum = np.cumsum(dist[order])
    cut = int(np.searchsorted(cum, p - 1e-12, side="left")) + 1
    keep = order[: min(cut, dist.size)]
    out = np.zeros_like(dist)
    out[keep] = dist[keep]
    return out / out.sum()


def sample_token(dist: np.ndarray, p: float, rng: np.random.Generator) -> int:
    filtered = nucleus_filter(dist, p)
    cdf = np.cumsum(filtered)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


@lru_cache(maxsize=32)
def _kind_masks(v: Vocabulary) -> dict[TokenKind, np.ndarray]:
    masks = {}
    for r in v.ranges:
        m = np.zeros(v.total_size, dtype=bool)
        end = r.end
        if r.kind is TokenKind.TEXT_TOKEN:
            end = min(r.end, r.start + 256)  # byte-level text
        m[r.start : end] = True
        masks[r.kind] = m
    return masks


def grammar_mask(task: Task, body: Sequence[int], v: Vocabulary, remaining: int, allow_invisible: bool) -> np.ndarray:
    """Tokens allowed next, given the generated body so far and the remaining length budget."""
    km = _kind_masks(v)
    coord, eos = km[TokenKind.COORD_BIN], km[TokenKind.EOS]
    if remaining <= 1:
        return eos.copy()
    n = len(body)
    if task is Task.DETECT:
        pos = n % 5
        if pos == 0:
            return eos.copy() if remaining < 6 else coord | eos
        if pos < 4:
            return coord.copy()
        return km[TokenKind.CLASS_LABEL] | km[TokenKind.NOISE_CLASS]
    if task is Task.SEGMENT:
        run = 0
        for t in reversed(body):
            if t == v.separator_id:
                break
            run += 1
        closable = run >= 6 and run % 2 == 0
        mask = coord.copy()
        if closable:
            mask |= eos | km[TokenKind.SEPARATOR]
        return mask
    if task is Task.KEYPOINT:
        if n >= 2 * v.keypoint_count:
            return eos.copy()
        return coord | km[TokenKind.INVISIBLE] if allow_invisible else coord.copy()
    if task is Task.CAPTION:
        return km[TokenKind.TEXT_TOKEN] | eos
    raise ValueError(f"unknown task {task}")


def _check_distribution(dist: np.ndarray, size: int) -> None:
    if dist.shape != (size,):
        raise ValueError(f"estimator returned shape {dist.shape}, expected ({size},)")
    if np.any(dist < 0) or not np.all(np.isfinite(dist)) or abs(dist.sum() - 1.0) > 1e-6:
        raise ValueError("estimator returned an unnormalized distribution")


def generate(
    est: NextTokenEstimator,
    image,
    prompt: TaskPrompt,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    v: Vocabulary,
) -> tuple[list[int], list[float]]:
    """Sample a body after ``prompt`` until Eos or ``cfg.max_len`` total tokens.

    Returns the generated ids (prompt excluded, Eos included when emitted) and, per
    step, the probability of the sampled token under the grammar-masked distribution.
    """
    prefix = prompt.ids(v)
    budget = cfg.max_len - len(prefix)
    if budget < 1:
        raise ValueError("max_len leaves no room after the prompt")
    if cfg.grammar and prompt.task is Task.KEYPOINT and budget < 2 * v.keypoint_count + 1:
        raise ValueError(f"max_len={cfg.max_len} cannot fit {v.keypoint_count} keypoints after the prompt")
    bind = getattr(est, "bind", None)
    step = bind(image) if bind is not None else (lambda pre: est.next_token_probs(image, pre))
    body: list[int] = []
    probs: list[float] = []
    while len(body) < budget:
        dist = np.asarray(step(prefix + body), dtype=np.float64)
        _check_distribution(dist, v.total_size)
        if cfg.grammar:
            mask = grammar_mask(prompt.task, body, v, budget - len(body), cfg.allow_invisible)
            masked = np.where(mask, dist, 0.0)
            total = masked.sum()
            dist = masked / total if total > 0 else mask / mask.sum()
        tok = sample_token(dist, cfg.p, rng)
        body.append(tok)
        probs.append(float(dist[tok]))
        if tok == v.eos_id:
            break
    return body, probs


def generate_parallel(
    est: NextTokenEstimator,
    image,
    prompts: Sequence[TaskPrompt],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    v: Vocabulary,
    max_workers: Optional[int] = None,
    return_exceptions: bool = False,
) -> list:
    """Run ``generate`` for each prompt on its own child stream of ``rng``.

    Child streams come from ``rng.spawn``, so output equals a sequential loop over
    ``zip(prompts, rng.spawn(len(prompts)))`` regardless of thread scheduling. With
    ``return_exceptions`` a failing prompt yields its exception in place of a result.
    """
    if not prompts:
        raise ValueError("need at least one prompt")
    children = rng.spawn(len(prompts))

    def run(args):
        prompt, child = args
        try:
            return generate(est, image, prompt, cfg, child, v)
        except Exception as exc:  # noqa: BLE001 - collected per prompt
            if return_exceptions:
                return exc
            raise

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, zip(prompts, children)))
