"""Command-line entry point: ``pixseq <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error. Flags override the matching keys
of the ``--config`` file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import codecs, inference, metrics
from .annotations import SceneAnnotation, Task
from .augment import JitterConfig
from .codecs import TaskPrompt, TokenSequence
from .config import load_kv
from .dataio import SHAPES, SyntheticConfig, generate_synthetic, load_coco, load_dataset, load_run, persist_run, save_dataset
from .geometry import BBox, BinaryMask, rasterize
from .mixer import TaskMixConfig, greedy_weight_step
from .model.network import ModelConfig, TransformerEstimator, init_params
from .model.sampling import SamplerConfig
from .overlay import caption_svg, detections_svg, keypoints_svg, polygons_svg
from .tasks import TaskSettings
from .train import TrainConfig, train
from .vocab import VocabConfig, Vocabulary, build_vocabulary

log = logging.getLogger("pixseq")

DEFAULTS = {
    "seed": "0",
    "vocab.bins": "64",
    "vocab.classes": "3",
    "vocab.text": "256",
    "vocab.keypoints": "3",
    "model.image_size": "64",
    "model.patch_size": "8",
    "model.d_model": "64",
    "model.num_heads": "4",
    "model.enc_layers": "2",
    "model.dec_layers": "2",
    "model.mlp_hidden": "128",
    "model.max_len": "64",
    "train.steps": "1000",
    "train.batch_size": "32",
    "train.lr": "0.001",
    "train.optimizer": "adam",
    "train.noise_count": "0",
    "train.jitter": "0",
    "sample.nucleus_p": "0.5",
    "sample.samples": "8",
    "data.n": "100",
    "synthetic.min_shapes": "1",
    "synthetic.max_shapes": "3",
}

# flag dest -> config key
FLAG_KEYS = {
    "seed": "seed",
    "task": "task",
    "samples": "sample.samples",
    "nucleus_p": "sample.nucleus_p",
    "steps": "train.steps",
    "image_size": "model.image_size",
    "n": "data.n",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--image-size", dest="image_size", type=int)

    p = _Parser(prog="pixseq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("encode", parents=[common], help="annotations -> sequence file")
    s.add_argument("--data", required=True, help="dataset directory or COCO annotation file")
    s.add_argument("--task", choices=[t.value for t in Task], required=True)

    s = sub.add_parser("decode", parents=[common], help="sequence file -> annotations + SVG overlays")
    s.add_argument("--in", dest="inp", required=True, help="sequence file")

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic shapes dataset")
    s.add_argument("--n", type=int)

    s = sub.add_parser("train", parents=[common], help="train on a task mix and persist a run directory")
    s.add_argument("--steps", type=int)

    s = sub.add_parser("sample", parents=[common], help="prompt a trained run per task")
    s.add_argument("--run", required=True, help="run directory written by train")
    s.add_argument("--data", required=True)
    s.add_argument("--task", choices=[t.value for t in Task], required=True)
    s.add_argument("--samples", type=int)
    s.add_argument("--nucleus-p", dest="nucleus_p", type=float)

    s = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    s.add_argument("--pred", required=True, help="predictions.json written by sample")
    s.add_argument("--data", required=True)

    s = sub.add_parser("weights-sweep", parents=[common], help="greedy task-weight candidates")
    s.add_argument("--task", choices=[t.value for t in Task], required=True, help="task to add")
    s.add_argument("--candidates", default="0.01,0.05,0.1,0.2,0.3,0.5")
    return p


def resolve(args: argparse.Namespace) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(load_kv(args.config))
    for dest, key in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def vocab_from(cfg) -> Vocabulary:
    return build_vocabulary(
        VocabConfig(int(cfg["vocab.bins"]), int(cfg["vocab.classes"]), int(cfg["vocab.text"]), int(cfg["vocab.keypoints"]))
    )


def model_config_from(cfg, v: Vocabulary) -> ModelConfig:
    return ModelConfig(
        vocab_size=v.total_size,
        image_size=int(cfg["model.image_size"]),
        patch_size=int(cfg["model.patch_size"]),
        d_model=int(cfg["model.d_model"]),
        num_heads=int(cfg["model.num_heads"]),
        enc_layers=int(cfg["model.enc_layers"]),
        dec_layers=int(cfg["model.dec_layers"]),
        mlp_hidden=int(cfg["model.mlp_hidden"]),
        max_len=int(cfg["model.max_len"]),
    )


def load_scenes(path: str, cfg) -> list[SceneAnnotation]:
    if path.startswith("synthetic:"):
        n = int(path.split(":", 1)[1])
        return generate_synthetic(_synthetic_cfg(cfg), n)
    p = Path(path)
    if p.is_dir():
        return load_dataset(p)
    return load_coco(p)


def _synthetic_cfg(cfg) -> SyntheticConfig:
    return SyntheticConfig(
        image_size=int(cfg["model.image_size"]),
        min_shapes=int(cfg["synthetic.min_shapes"]),
        max_shapes=int(cfg["synthetic.max_shapes"]),
        seed=int(cfg["seed"]),
    )


def _write(out: Optional[str], text: str) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ---------------------------------------------------------------


def cmd_encode(args, cfg) -> None:
    v = vocab_from(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    task = Task(cfg["task"])
    max_len = int(cfg.get("codec.max_len", codecs.MAX_SEQ_LEN))
    seqs: list[TokenSequence] = []
    for scene in load_scenes(args.data, cfg):
        if task is Task.DETECT:
            seqs.append(codecs.encode_detection(scene.instances, v, rng, max_len))
        elif task is Task.SEGMENT:
            seqs += [codecs.encode_segmentation(i, v, rng, max_len) for i in scene.instances if i.polygons]
        elif task is Task.KEYPOINT:
            seqs += [codecs.encode_keypoints(i, v, max_len) for i in scene.instances if i.keypoints is not None]
        else:
            seqs += [codecs.encode_caption(c, v, max_len) for c in scene.captions]
    _write(args.out, "".join(s.to_line() + "\n" for s in seqs))


def decode_record(seq: TokenSequence, v: Vocabulary, size: int, tally: Counter) -> tuple[dict, str]:
    """JSON-ready decoded record plus its SVG overlay."""
    body = seq.body
    if seq.task is Task.DETECT:
        dets = codecs.decode_detection(body, None, v, tally)
        rec = {"detections": [{"box": list(d.box.as_tuple()), "class_id": d.class_id, "score": d.score} for d in dets]}
        return rec, detections_svg(list(dets), size, size, SHAPES)
    prompt = TaskPrompt.from_ids(seq.ids[: seq.prompt_len], v)
    if seq.task is Task.SEGMENT:
        polys = codecs.decode_polygons(body, v, tally)
        rec = {"condition": list(prompt.condition.as_tuple()), "polygons": [[list(p) for p in poly.vertices] for poly in polys]}
        return rec, polygons_svg(polys, size, size, prompt.condition)
    if seq.task is Task.KEYPOINT:
        kps = codecs.decode_keypoints(body, v, tally)
        rec = {"condition": list(prompt.condition.as_tuple()), "keypoints": [None if k is None else list(k) for k in kps]}
        return rec, keypoints_svg(kps, size, size, prompt.condition)
    text = codecs.decode_caption(body, v, tally)
    return {"caption": text}, caption_svg(text, size, size)


def cmd_decode(args, cfg) -> None:
    v = vocab_from(cfg)
    size = int(cfg["model.image_size"])
    with open(args.inp) as fh:
        seqs = codecs.read_sequences(fh)
    out = Path(args.out or "decoded")
    out.mkdir(parents=True, exist_ok=True)
    tally: Counter = Counter()
    records = []
    for k, seq in enumerate(seqs):
        if seq.task is None:
            raise ValueError(f"record {k} carries no task tag")
        rec, svg = decode_record(seq, v, size, tally)
        records.append({"index": k, "task": seq.task.value, **rec})
        (out / f"overlay_{k:04d}.svg").write_text(svg)
    doc = {"records": records, "warnings": dict(sorted(tally.items()))}
    (out / "decoded.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def cmd_gen_data(args, cfg) -> None:
    if not args.out:
        raise UsageError("gen-data needs --out")
    scenes = generate_synthetic(_synthetic_cfg(cfg), int(cfg["data.n"]))
    save_dataset(scenes, args.out)


def _task_settings(cfg, mc: ModelConfig) -> dict[Task, TaskSettings]:
    jitter = None
    if cfg["train.jitter"] not in ("0", "false", "no", ""):
        lo, hi = (float(x) for x in cfg["train.jitter"].split(","))
        jitter = JitterConfig(lo, hi, mc.image_size, mc.image_size)
    out = {}
    for t in Task:
        out[t] = TaskSettings(
            image_size=mc.image_size,
            jitter=jitter if t in (Task.DETECT, Task.SEGMENT) else None,
            noise_count=int(cfg["train.noise_count"]) if t is Task.DETECT else 0,
            max_len=mc.max_len + 1,
        )
    return out


def cmd_train(args, cfg) -> None:
    if not args.out:
        raise UsageError("train needs --out")
    v = vocab_from(cfg)
    mc = model_config_from(cfg, v)
    if not any(k.startswith("task.") and k.endswith(".weight") for k in cfg):
        cfg["task.detect.weight"] = "1.0"
    mix = TaskMixConfig.from_mapping(cfg)
    datasets = {}
    for task in mix.tasks:
        handle = mix.data.get(task, f"synthetic:{cfg['data.n']}")
        datasets[task] = load_scenes(handle, cfg)
    tc = TrainConfig(
        steps=int(cfg["train.steps"]),
        batch_size=int(cfg["train.batch_size"]),
        lr=float(cfg["train.lr"]),
        optimizer=cfg["train.optimizer"],
        seed=int(cfg["seed"]),
    )
    params, records = train(mix, datasets, v, mc, tc, _task_settings(cfg, mc), init_params(mc, int(cfg["seed"])))
    persist_run(args.out, cfg, params, records)


def cmd_sample(args, cfg) -> None:
    run_cfg, params, _ = load_run(args.run)
    merged = {**run_cfg, **{k: cfg[k] for k in ("seed", "task", "sample.samples", "sample.nucleus_p") if k in cfg}}
    v = vocab_from(merged)
    size = params.config.image_size
    task = Task(merged["task"])
    scfg = SamplerConfig(p=float(merged["sample.nucleus_p"]), max_len=params.config.max_len)
    est = TransformerEstimator(params)
    rng = np.random.default_rng(int(merged["seed"]))
    out = Path(args.out or "samples")
    out.mkdir(parents=True, exist_ok=True)
    images = []
    for scene in load_scenes(args.data, merged):
        if scene.image is None:
            raise ValueError(f"image {scene.image_id} has no pixels to sample from")
        entry: dict = {"image_id": scene.image_id}
        if task is Task.DETECT:
            dets = list(inference.detect(est, scene, v, scfg, rng, size))
            entry["detections"] = [{"box": list(d.box.as_tuple()), "class_id": d.class_id, "score": d.score} for d in dets]
            (out / f"overlay_{scene.image_id:06d}.svg").write_text(detections_svg(dets, scene.width, scene.height, SHAPES))
        elif task is Task.SEGMENT:
            entry["instances"] = []
            for k, inst in enumerate(scene.instances):
                if not inst.polygons:
                    continue
                mask = inference.segment(est, scene, inst.bbox, v, scfg, rng, size, int(merged["sample.samples"]))
                name = f"mask_{scene.image_id:06d}_{k:03d}.pbm"
                (out / name).write_bytes(mask.to_pbm())
                entry["instances"].append({"gt_index": k, "mask": name, "score": 1.0})
        elif task is Task.KEYPOINT:
            entry["instances"] = []
            for k, inst in enumerate(scene.instances):
                if inst.keypoints is None:
                    continue
                kps = inference.keypoints(est, scene, inst.bbox, v, scfg, rng, size)
                entry["instances"].append({"gt_index": k, "keypoints": [None if p is None else list(p) for p in kps], "score": 1.0})
        else:
            entry["caption"] = inference.caption(est, scene, v, scfg, rng, size)
        images.append(entry)
    doc = {"task": task.value, "nucleus_p": scfg.p, "images": images}
    (out / "predictions.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def evaluate_predictions(doc: dict, scenes: Sequence[SceneAnnotation], pred_dir: Path, keypoint_count: int) -> list[str]:
    task = Task(doc["task"])
    by_id = {s.image_id: s for s in scenes}
    entries = [(e, by_id[e["image_id"]]) for e in doc["images"] if e["image_id"] in by_id]
    if len(entries) != len(doc["images"]):
        raise ValueError("predictions reference images missing from the dataset")
    out = []
    if task is Task.DETECT:
        preds = [[codecs.Detection(BBox(*d["box"]), d["class_id"], d["score"]) for d in e["detections"]] for e, _ in entries]
        gts = [s.instances for _, s in entries]
        for thr in (0.5, 0.75):
            out.append(metrics.metric_record("detect", "AP", metrics.detection_ap(preds, gts, thr), thr))
    elif task is Task.SEGMENT:
        preds, gts = [], []
        for e, s in entries:
            preds.append([(i["score"], BinaryMask.from_pbm((pred_dir / i["mask"]).read_bytes())) for i in e["instances"]])
            gts.append([rasterize(inst.polygons, s.height, s.width) for inst in s.instances if inst.polygons])
        out.append(metrics.metric_record("segment", "mask_AP", metrics.mask_ap(preds, gts, 0.5), 0.5))
    elif task is Task.KEYPOINT:
        cfg = metrics.OksConfig.uniform(keypoint_count)
        preds, gts = [], []
        for e, s in entries:
            preds.append([(i["score"], [None if p is None else tuple(p) for p in i["keypoints"]]) for i in e["instances"]])
            gts.append([(list(inst.keypoints), inst.bbox) for inst in s.instances if inst.keypoints is not None])
        out.append(metrics.metric_record("keypoint", "OKS_AP", metrics.keypoint_ap(preds, gts, cfg, 0.5), 0.5))
    else:
        pairs = [(e["caption"], s.captions) for e, s in entries if s.captions]
        out.append(metrics.metric_record("caption", "BLEU-4", metrics.mean_bleu(pairs, 4), None))
    return out


def cmd_eval(args, cfg) -> None:
    doc = json.loads(Path(args.pred).read_text())
    scenes = load_scenes(args.data, cfg)
    lines = evaluate_predictions(doc, scenes, Path(args.pred).parent, int(cfg["vocab.keypoints"]))
    _write(args.out, "".join(l + "\n" for l in lines))


def cmd_weights_sweep(args, cfg) -> None:
    existing = {Task(k.split(".")[1]): v for k, v in cfg.items() if k.startswith("task.") and k.endswith(".weight")}
    if not existing:
        raise ValueError("weights-sweep needs existing task.<name>.weight entries in --config")
    cands = [c.strip() for c in args.candidates.split(",") if c.strip()]
    configs = greedy_weight_step(existing, Task(args.task), cands)
    lines = []
    for cand, mix in zip(cands, configs):
        weights = {t.value: float(w) for t, w in mix.weights.items()}
        exact = {t.value: str(w) for t, w in mix.weights.items()}
        lines.append(json.dumps({"candidate": cand, "weights": weights, "exact": exact}, sort_keys=True))
        if args.out:
            d = Path(args.out)
            d.mkdir(parents=True, exist_ok=True)
            body = "".join(f"task.{t}.weight = {w!r}\n" for t, w in weights.items())
            (d / f"mix_{args.task}_{cand}.cfg").write_text(body)
    sys.stdout.write("".join(l + "\n" for l in lines))


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "weights-sweep": cmd_weights_sweep,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"pixseq: data error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING)
    sys.exit(run())


if __name__ == "__main__":
    main()
