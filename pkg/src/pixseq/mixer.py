"""Multi-task training composition: batch mixing, data mixing and greedy task weighting."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotations import SceneAnnotation, Task
from .codecs import TokenSequence
from .config import parse_kv
from .tasks import Example, TaskSettings, default_settings, eligible, make_example
from .vocab import Vocabulary

WEIGHT_TOLERANCE = 1e-9


class Strategy(str, enum.Enum):
    DATA_MIX = "data"
    BATCH_MIX = "batch"


@dataclass
class TaskMixConfig:
    weights: dict[Task, Real]
    data: dict[Task, str] = field(default_factory=dict)
    strategy: Strategy = Strategy.BATCH_MIX

    def __post_init__(self):
        self.weights = {Task(k): w for k, w in self.weights.items()}
        self.data = {Task(k): d for k, d in self.data.items()}
        self.strategy = Strategy(self.strategy)
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("task weights must be >= 0")
        total = sum(self.weights.values())
        if abs(float(total) - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"task weights must sum to 1, got {float(total)!r}")

    @property
    def tasks(self) -> list[Task]:
        return list(self.weights)

    def probabilities(self) -> np.ndarray:
        w = np.array([float(x) for x in self.weights.values()])
        return w / w.sum()

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "TaskMixConfig":
        weights, data = {}, {}
        for key, value in kv.items():
            parts = key.split(".")
            if len(parts) == 3 and parts[0] == "task":
                task = Task(parts[1])
                if parts[2] == "weight":
                    weights[task] = float(value)
                elif parts[2] == "data":
                    data[task] = value
        if not weights:
            raise ValueError("config defines no task.<name>.weight entries")
        return cls(weights, data, Strategy(kv.get("mix.strategy", "batch")))

    @classmethod
    def from_text(cls, text: str) -> "TaskMixConfig":
        return cls.from_mapping(parse_kv(text))

    def to_mapping(self) -> dict[str, str]:
        out = {"mix.strategy": self.strategy.value}
        for t, w in self.weights.items():
            out[f"task.{t.value}.weight"] = repr(float(w))
        for t, d in self.data.items():
            out[f"task.{t.value}.data"] = d
        return out


@dataclass
class TrainingBatch:
    task: Task
    examples: list[Example]
    gradient_weight: float
    pad_id: int

    def __len__(self) -> int:
        return len(self.examples)


def eligible_scenes(datasets: Mapping[Task, Sequence[SceneAnnotation]], task: Task) -> list[SceneAnnotation]:
    return [s for s in datasets.get(task, ()) if eligible(s, task)]


def next_batch_batchmix(
    cfg: TaskMixConfig,
    datasets: Mapping[Task, Sequence[SceneAnnotation]],
    rng: np.random.Generator,
    batch_size: int,
    v: Vocabulary,
    settings: Optional[Mapping[Task, TaskSettings]] = None,
) -> TrainingBatch:
    """Sample one task by weight, then a single-task batch with that task's augmentations."""
    if cfg.strategy is not Strategy.BATCH_MIX:
        raise ValueError("next_batch_batchmix needs the batch mixing strategy")
    settings = settings or default_settings()
    task = draw_task(cfg, rng)
    pool = eligible_scenes(datasets, task)
    if not pool:
        raise ValueError(f"no usable data for task {task.value}")
    examples: list[Example] = []
    attempts = 0
    while len(examples) < batch_size:
        attempts += 1
        if attempts > 100 * batch_size:
            raise ValueError(f"could not build a {task.value} batch: scenes keep yielding no example")
        ex = make_example(task, pool[int(rng.integers(len(pool)))], v, rng, settings[task])
        if ex is not None:
            examples.append(ex)
    return TrainingBatch(task, examples, float(cfg.weights[task]), v.eos_id)


def draw_task(cfg: TaskMixConfig, rng: np.random.Generator) -> Task:
    """Pick a task with probability proportional to its weight."""
    return cfg.tasks[int(rng.choice(len(cfg.tasks), p=cfg.probabilities()))]


def mix_counts(cfg: TaskMixConfig, sizes: Mapping[Task, int]) -> dict[Task, int]:
    """Per-task example counts for a data-mixing pool.

    The pool is the smallest size at which no positively weighted task has to drop
    examples; each task then gets round(weight * pool size) examples.
    """
    active = {t: float(w) for t, w in cfg.weights.items() if w > 0}
    for t in active:
        if sizes.get(t, 0) == 0:
            raise ValueError(f"task {t.value} has positive weight but no data")
    total = max(sizes[t] / w for t, w in active.items())
    return {t: int(round(w * total)) for t, w in active.items()}


def build_mixed_dataset(
    cfg: TaskMixConfig,
    datasets: Mapping[Task, Sequence[SceneAnnotation]],
    rng: np.random.Generator,
    v: Vocabulary,
    settings: Optional[Mapping[Task, TaskSettings]] = None,
) -> list[tuple[np.ndarray, TokenSequence, Task]]:
    """Tokenize everything up front, balance per task by replication/subsampling, shuffle."""
    if cfg.strategy is not Strategy.DATA_MIX:
        raise ValueError("build_mixed_dataset needs the data mixing strategy")
    settings = settings or default_settings()
    pools = {t: eligible_scenes(datasets, t) for t, w in cfg.weights.items() if w > 0}
    counts = mix_counts(cfg, {t: len(p) for t, p in pools.items()})
    out = []
    for task, n in counts.items():
        pool = pools[task]
        reps, rem = divmod(n, len(pool))
        picks = list(range(len(pool))) * reps + sorted(rng.choice(len(pool), size=rem, replace=False).tolist())
        for i in picks:
            ex = make_example(task, pool[i], v, rng, settings[task], image_augment=False)
            if ex is not None:
                out.append((ex[0], ex[1], task))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _exact(w) -> Fraction:
    return w if isinstance(w, Fraction) else Fraction(str(w))


def greedy_weight_step(
    existing: Mapping[Task, Real], new_task: Task, candidate_weights: Sequence[Real]
) -> list[TaskMixConfig]:
    """One step of the greedy schedule: give ``new_task`` weight w and scale the rest by 1 - w.

    Arithmetic is done in exact fractions (floats are read by their decimal repr), so
    ratios among existing tasks are preserved exactly.
    """
    base = {Task(t): _exact(w) for t, w in existing.items()}
    if Task(new_task) in base:
        raise ValueError(f"task {Task(new_task).value} is already in the mix")
    out = []
    for cand in candidate_weights:
        w = _exact(cand)
        if not 0 < w < 1:
            raise ValueError(f"candidate weight {cand} outside (0, 1)")
        weights = {t: x * (1 - w) for t, x in base.items()}
        weights[Task(new_task)] = w
        out.append(TaskMixConfig(weights))
    return out
