"""Checkpoint file: a magic line, one JSON header line carrying the model config and
the (name, dims, offset) manifest, then the parameters as little-endian float32."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .network import ModelConfig, ModelParams

MAGIC = b"PIXSEQ-CKPT 1\n"


def dumps_checkpoint(params: ModelParams) -> bytes:
    header = {
        "config": params.config_dict(),
        "manifest": [[name, list(dims), off] for name, dims, off in params.manifest()],
        "count": params.num_params,
    }
    payload = params.flat().astype("<f4").tobytes()
    return MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload


def loads_checkpoint(data: bytes) -> ModelParams:
    if not data.startswith(MAGIC):
        raise ValueError("not a checkpoint file (bad magic)")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC) : end])
    cfg = ModelConfig(**header["config"])
    flat = np.frombuffer(data[end + 1 :], dtype="<f4")
    if flat.size != header["count"]:
        raise ValueError(f"payload holds {flat.size} floats, header says {header['count']}")
    tensors = {}
    for name, dims, off in header["manifest"]:
        n = int(np.prod(dims)) if dims else 1
        tensors[name] = torch.tensor(flat[off : off + n].reshape(dims).astype(np.float32))
    return ModelParams(cfg, tensors)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def load_checkpoint(path) -> ModelParams:
    return loads_checkpoint(Path(path).read_bytes())
