"""Greedy task-weight sweep at toy scale.

Starts from detection alone, then for each candidate weight of a new task trains a
fresh model on the rescaled mix and reports the mean training loss of every task over
the last steps. Shows how the weight of the added task trades against the old ones.

    python scripts/sweep_task_weights.py --add caption --candidates 0.1,0.3,0.5 --steps 600
"""
import argparse

import numpy as np

from pixseq.annotations import Task
from pixseq.dataio import SyntheticConfig, generate_synthetic
from pixseq.mixer import greedy_weight_step
from pixseq.model.network import ModelConfig
from pixseq.train import TrainConfig, train
from pixseq.vocab import VocabConfig, build_vocabulary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--add", choices=[t.value for t in Task if t is not Task.DETECT], default="caption")
    ap.add_argument("--candidates", default="0.1,0.3,0.5")
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--tail", type=int, default=50, help="steps averaged per task at the end")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    v = build_vocabulary(VocabConfig(64, 3, 256, 3))
    scenes = generate_synthetic(SyntheticConfig(seed=1, min_shapes=1, max_shapes=2), 1000)
    mc = ModelConfig(vocab_size=v.total_size, max_len=48)
    new = Task(args.add)
    mixes = greedy_weight_step({Task.DETECT: 1}, new, args.candidates.split(","))
    for cand, mix in zip(args.candidates.split(","), mixes):
        datasets = {t: scenes for t in mix.tasks}
        _, records = train(mix, datasets, v, mc, TrainConfig(steps=args.steps, batch_size=16, seed=args.seed))
        parts = []
        for t in mix.tasks:
            losses = [r["loss"] for r in records if r["task"] == t.value][-args.tail:]
            parts.append(f"{t.value} {np.mean(losses):.3f}" if losses else f"{t.value} n/a")
        weights = ", ".join(f"{t.value}={float(w):g}" for t, w in mix.weights.items())
        print(f"{new.value} weight {cand}: [{weights}]  tail loss: {'; '.join(parts)}", flush=True)


if __name__ == "__main__":
    main()
