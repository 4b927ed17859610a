"""Train the small encoder-decoder on single-shape synthetic scenes and report box AP.

    python scripts/train_toy_detection.py --steps 4000
"""
import argparse
import time

import numpy as np

from pixseq import inference, metrics
from pixseq.annotations import Task
from pixseq.dataio import SyntheticConfig, generate_synthetic
from pixseq.mixer import TaskMixConfig
from pixseq.model import SamplerConfig, TransformerEstimator, init_params
from pixseq.model.network import ModelConfig
from pixseq.train import TrainConfig, train
from pixseq.vocab import VocabConfig, build_vocabulary


def box_ap(params, scenes, v, p, seed):
    est = TransformerEstimator(params)
    rng = np.random.default_rng(seed)
    cfg = SamplerConfig(p=p, max_len=params.config.max_len)
    preds = [list(inference.detect(est, s, v, cfg, rng, params.config.image_size)) for s in scenes]
    return metrics.detection_ap(preds, [s.instances for s in scenes], 0.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--train-scenes", type=int, default=2000)
    ap.add_argument("--test-scenes", type=int, default=200)
    ap.add_argument("--nucleus-p", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    v = build_vocabulary(VocabConfig(64, 3, 256, 3))
    single = dict(min_shapes=1, max_shapes=1, image_size=64)
    train_scenes = generate_synthetic(SyntheticConfig(seed=1, **single), args.train_scenes)
    test_scenes = generate_synthetic(SyntheticConfig(seed=2, **single), args.test_scenes)
    mc = ModelConfig(vocab_size=v.total_size, max_len=16)

    start = time.perf_counter()

    def report(step, batch, loss):
        if step % 250 == 0:
            print(f"step {step:5d}  loss {loss:7.3f}  {time.perf_counter() - start:6.1f}s", flush=True)

    params, _ = train(TaskMixConfig({Task.DETECT: 1.0}), {Task.DETECT: train_scenes}, v, mc,
                      TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed),
                      on_step=report)
    print(f"trained AP@0.5   {box_ap(params, test_scenes, v, args.nucleus_p, args.seed):.3f}")
    print(f"untrained AP@0.5 {box_ap(init_params(mc, args.seed), test_scenes, v, args.nucleus_p, args.seed):.3f}")


if __name__ == "__main__":
    main()
