"""Training loop over a task mix."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .annotations import SceneAnnotation, Task
from .mixer import Strategy, TaskMixConfig, TrainingBatch, build_mixed_dataset, next_batch_batchmix
from .model.network import ModelConfig, ModelParams, Trainer, init_params
from .tasks import TaskSettings, default_settings
from .vocab import Vocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    log_every: int = 1


def _datamix_batches(pool, rng, batch_size, pad_id):
    while True:
        order = rng.permutation(len(pool))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            chunk = [pool[i] for i in order[start : start + batch_size]]
            tasks = {t for _, _, t in chunk}
            task = tasks.pop() if len(tasks) == 1 else None
            yield TrainingBatch(task, [(img, seq) for img, seq, _ in chunk], 1.0, pad_id)


def train(
    mix: TaskMixConfig,
    datasets: Mapping[Task, Sequence[SceneAnnotation]],
    v: Vocabulary,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    settings: Optional[Mapping[Task, TaskSettings]] = None,
    params: Optional[ModelParams] = None,
    on_step: Optional[Callable[[int, TrainingBatch, float], None]] = None,
) -> tuple[ModelParams, list[dict]]:
    """Run ``cfg.steps`` optimizer steps; returns final params and metric records
    ``{step, task, loss}`` (loss measured before each update)."""
    settings = settings or default_settings(model_cfg.image_size, model_cfg.max_len)
    rng = np.random.default_rng(cfg.seed)
    params = params if params is not None else init_params(model_cfg, seed=cfg.seed)
    trainer = Trainer(params, cfg.lr, cfg.optimizer)
    metrics: list[dict] = []
    if mix.strategy is Strategy.DATA_MIX:
        pool = build_mixed_dataset(mix, datasets, rng, v, settings)
        if len(pool) < cfg.batch_size:
            raise ValueError(f"mixed pool of {len(pool)} examples is smaller than one batch")
        batches = _datamix_batches(pool, rng, cfg.batch_size, v.eos_id)
        draw = lambda: next(batches)  # noqa: E731
    else:
        draw = lambda: next_batch_batchmix(mix, datasets, rng, cfg.batch_size, v, settings)  # noqa: E731
    for step in range(cfg.steps):
        batch = draw()
        loss = trainer.step(batch)
        if step % cfg.log_every == 0:
            task = batch.task.value if batch.task is not None else "mixed"
            metrics.append({"step": step, "task": task, "loss": loss})
            log.debug("step %d task %s loss %.4f", step, task, loss)
        if on_step is not None:
            on_step(step, batch, loss)
    return trainer.params, metrics
