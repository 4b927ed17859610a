"""Tiny image-encoder / token-decoder transformer written against a flat parameter dict.

The encoder embeds non-overlapping patches, the decoder runs causal self-attention,
cross-attention to the patch features and an MLP per block. The output projection is
tied to the token embedding. Parameters live in an ordered ``name -> tensor`` dict so
they can be flattened into a single vector for checkpoints and gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..codecs import TokenSequence


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    image_size: int = 64
    channels: int = 3
    patch_size: int = 8
    d_model: int = 64
    num_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    mlp_hidden: int = 128
    max_len: int = 64

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.d_model % self.num_heads:
            raise ValueError("d_model must be a multiple of num_heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    def manifest(self) -> list[tuple[str, tuple[int, ...], int]]:
        out, offset = [], 0
        for name, t in self.tensors.items():
            out.append((name, tuple(t.shape), offset))
            offset += t.numel()
        return out

    @property
    def num_params(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.detach().cpu().numpy().ravel() for t in self.tensors.values()])

    def with_flat(self, flat: np.ndarray, dtype: torch.dtype = torch.float32) -> "ModelParams":
        flat = np.asarray(flat)
        if flat.size != self.num_params:
            raise ValueError(f"flat vector has {flat.size} entries, expected {self.num_params}")
        tensors = {}
        for name, shape, off in self.manifest():
            n = int(np.prod(shape))
            tensors[name] = torch.tensor(flat[off : off + n].reshape(shape), dtype=dtype)
        return ModelParams(self.config, tensors)

    def to(self, dtype: torch.dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.detach().to(dtype).clone() for k, v in self.tensors.items()})

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.detach().clone() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.tensors.values())

    def config_dict(self) -> dict:
        return asdict(self.config)


def _block_shapes(prefix: str, cfg: ModelConfig, cross: bool) -> list[tuple[str, tuple[int, ...]]]:
    d, h = cfg.d_model, cfg.mlp_hidden
    shapes = [(f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,))]
    shapes += [(f"{prefix}.self.{w}", (d, d)) for w in ("wq", "wk", "wv", "wo")]
    if cross:
        shapes += [(f"{prefix}.lnx.g", (d,)), (f"{prefix}.lnx.b", (d,))]
        shapes += [(f"{prefix}.cross.{w}", (d, d)) for w in ("wq", "wk", "wv", "wo")]
    shapes += [
        (f"{prefix}.ln2.g", (d,)),
        (f"{prefix}.ln2.b", (d,)),
        (f"{prefix}.mlp.w1", (d, h)),
        (f"{prefix}.mlp.b1", (h,)),
        (f"{prefix}.mlp.w2", (h, d)),
        (f"{prefix}.mlp.b2", (d,)),
    ]
    return shapes


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d = cfg.d_model
    shapes = [("patch.w", (cfg.patch_dim, d)), ("patch.b", (d,)), ("enc.pos", (cfg.num_patches, d))]
    for i in range(cfg.enc_layers):
        shapes += _block_shapes(f"enc{i}", cfg, cross=False)
    shapes += [("enc.ln.g", (d,)), ("enc.ln.b", (d,))]
    shapes += [("tok.emb", (cfg.vocab_size, d)), ("dec.pos", (cfg.max_len, d))]
    for i in range(cfg.dec_layers):
        shapes += _block_shapes(f"dec{i}", cfg, cross=True)
    shapes += [("dec.ln.g", (d,)), ("dec.ln.b", (d,)), ("out.b", (cfg.vocab_size,))]
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> ModelParams:
    gen = torch.Generator().manual_seed(seed)
    tensors = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            t = torch.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            t = torch.zeros(shape, dtype=dtype)
        elif name in ("enc.pos", "dec.pos", "tok.emb"):
            t = 0.02 * torch.randn(shape, generator=gen, dtype=dtype)
        else:
            t = torch.randn(shape, generator=gen, dtype=dtype) / math.sqrt(shape[0])
        tensors[name] = t
    return ModelParams(cfg, tensors)


def _check(x: torch.Tensor, where: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise FloatingPointError(f"non-finite activations in layer {where}")
    return x


def _attention(q_in, kv_in, p, prefix, heads, causal):
    b, lq, d = q_in.shape
    lk = kv_in.shape[1]
    dh = d // heads
    q = (q_in @ p[f"{prefix}.wq"]).view(b, lq, heads, dh).transpose(1, 2)
    k = (kv_in @ p[f"{prefix}.wk"]).view(b, lk, heads, dh).transpose(1, 2)
    v = (kv_in @ p[f"{prefix}.wv"]).view(b, lk, heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if causal:
        mask = torch.ones(lq, lk, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
    out = torch.softmax(scores, dim=-1) @ v
    return out.transpose(1, 2).reshape(b, lq, d) @ p[f"{prefix}.wo"]


def _ln(x, p, prefix):
    return F.layer_norm(x, (x.shape[-1],), p[f"{prefix}.g"], p[f"{prefix}.b"])


def _mlp(x, p, prefix):
    h = F.gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"])
    return h @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    b, h, w, c = images.shape
    x = images.reshape(b, h // patch, patch, w // patch, patch, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, (h // patch) * (w // patch), patch * patch * c)


def encode_images(p: dict, cfg: ModelConfig, images: torch.Tensor, check: bool = True) -> torch.Tensor:
    x = patchify(images, cfg.patch_size) @ p["patch.w"] + p["patch.b"] + p["enc.pos"]
    if check:
        _check(x, "patch_embed")
    for i in range(cfg.enc_layers):
        h = _ln(x, p, f"enc{i}.ln1")
        x = x + _attention(h, h, p, f"enc{i}.self", cfg.num_heads, False)
        x = x + _mlp(_ln(x, p, f"enc{i}.ln2"), p, f"enc{i}.mlp")
        if check:
            _check(x, f"enc{i}")
    return _ln(x, p, "enc.ln")


def decode_logits(p: dict, cfg: ModelConfig, memory: torch.Tensor, ids: torch.Tensor, check: bool = True) -> torch.Tensor:
    length = ids.shape[1]
    if length > cfg.max_len:
        raise ValueError(f"prefix length {length} exceeds model max_len={cfg.max_len}")
    x = p["tok.emb"][ids] + p["dec.pos"][:length]
    for i in range(cfg.dec_layers):
        h = _ln(x, p, f"dec{i}.ln1")
        x = x + _attention(h, h, p, f"dec{i}.self", cfg.num_heads, True)
        x = x + _attention(_ln(x, p, f"dec{i}.lnx"), memory, p, f"dec{i}.cross", cfg.num_heads, False)
        x = x + _mlp(_ln(x, p, f"dec{i}.ln2"), p, f"dec{i}.mlp")
        if check:
            _check(x, f"dec{i}")
    logits = _ln(x, p, "dec.ln") @ p["tok.emb"].T + p["out.b"]
    if check:
        _check(logits, "output")
    return logits


def _as_image_batch(images, dtype) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.tensor(arr, dtype=dtype)


def forward_all(params: ModelParams, image: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    """Next-token distributions at every position of ``ids``; row j conditions on ids[: j + 1]."""
    dtype = next(iter(params.tensors.values())).dtype
    with torch.no_grad():
        memory = encode_images(params.tensors, params.config, _as_image_batch(image, dtype))
        logits = decode_logits(params.tensors, params.config, memory, torch.tensor([list(ids)], dtype=torch.long))
        return torch.softmax(logits[0].double(), dim=-1).numpy()


def forward(params: ModelParams, image: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
    """Distribution over the vocabulary for the token following ``prefix``."""
    if len(prefix) >= params.config.max_len + 1:
        raise ValueError(f"prefix length {len(prefix)} too long for max_len={params.config.max_len}")
    return forward_all(params, image, prefix)[-1]


class TransformerEstimator:
    """Read-only next-token estimator over fixed parameters; safe to share across threads."""

    def __init__(self, params: ModelParams):
        self.params = params

    def next_token_probs(self, image, prefix: Sequence[int]) -> np.ndarray:
        return forward(self.params, image, prefix)

    def bind(self, image) -> Callable[[Sequence[int]], np.ndarray]:
        p, cfg = self.params.tensors, self.params.config
        dtype = next(iter(p.values())).dtype
        with torch.no_grad():
            memory = encode_images(p, cfg, _as_image_batch(image, dtype))

        def step(prefix: Sequence[int]) -> np.ndarray:
            with torch.no_grad():
                logits = decode_logits(p, cfg, memory, torch.tensor([list(prefix)], dtype=torch.long))
                return torch.softmax(logits[0, -1].double(), dim=-1).numpy()

        return step


# -- training -------------------------------------------------------------------


def collate(examples: Sequence[tuple[np.ndarray, TokenSequence]], pad_id: int, dtype=torch.float32):
    """Stack images and right-pad sequences with zero-weight ``pad_id`` tokens."""
    length = max(len(s) for _, s in examples)
    ids = torch.full((len(examples), length), pad_id, dtype=torch.long)
    weights = torch.zeros((len(examples), length), dtype=dtype)
    for i, (_, s) in enumerate(examples):
        ids[i, : len(s)] = torch.tensor(s.ids)
        weights[i, : len(s)] = torch.tensor(s.weights, dtype=dtype)
    images = torch.tensor(np.stack([np.asarray(img, dtype=np.float64) for img, _ in examples]), dtype=dtype)
    return images, ids, weights


def sequence_losses(p: dict, cfg: ModelConfig, images, ids, weights) -> torch.Tensor:
    """Per-sequence weighted negative log-likelihood, shape (batch,)."""
    memory = encode_images(p, cfg, images)
    logits = decode_logits(p, cfg, memory, ids[:, :-1])
    logp = torch.log_softmax(logits, dim=-1).gather(-1, ids[:, 1:, None])[..., 0]
    return -(weights[:, 1:] * logp).sum(dim=1)


def batch_loss(params: ModelParams, batch, scaled: bool = True) -> torch.Tensor:
    """Batch-mean weighted NLL, multiplied by the batch's gradient weight when ``scaled``."""
    dtype = next(iter(params.tensors.values())).dtype
    images, ids, weights = collate(batch.examples, batch.pad_id, dtype)
    loss = sequence_losses(params.tensors, params.config, images, ids, weights).mean()
    return loss * batch.gradient_weight if scaled else loss


def _grads(params: ModelParams, batch) -> tuple[dict[str, torch.Tensor], float]:
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.tensors.items()}
    live = ModelParams(params.config, leaves)
    raw = batch_loss(live, batch, scaled=False)
    (raw * batch.gradient_weight).backward()
    grads = {k: v.grad if v.grad is not None else torch.zeros_like(v) for k, v in leaves.items()}
    for k, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise FloatingPointError(f"non-finite gradient for {k}")
    return grads, float(raw.detach())


def train_step(params: ModelParams, batch, lr: float) -> tuple[ModelParams, float]:
    """One plain gradient-descent step. Returns the updated params and the pre-update
    batch-mean loss (before scaling by the gradient weight)."""
    if not params.is_finite():
        raise FloatingPointError("parameters are not finite")
    grads, loss = _grads(params, batch)
    new = {k: (v.detach() - lr * grads[k]) for k, v in params.tensors.items()}
    return ModelParams(params.config, new), loss


class Trainer:
    """Owns parameters plus optimizer state. ``optimizer`` is ``"sgd"`` (with momentum) or ``"adam"``."""

    def __init__(self, params: ModelParams, lr: float, optimizer: str = "adam", momentum: float = 0.9,
                 betas: tuple[float, float] = (0.9, 0.999), grad_clip: Optional[float] = 1.0):
        if optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {optimizer!r}")
        self.params = params.clone()
        self.lr = lr
        self.kind = optimizer
        self.momentum = momentum
        self.betas = betas
        self.grad_clip = grad_clip
        self.steps = 0
        self._m = {k: torch.zeros_like(v) for k, v in self.params.tensors.items()}
        self._v = {k: torch.zeros_like(v) for k, v in self.params.tensors.items()}

    def step(self, batch) -> float:
        # zero-weight batches must leave parameters untouched, including momentum drift
        if batch.gradient_weight == 0.0:
            return float(batch_loss(self.params, batch, scaled=False).detach())
        grads, loss = _grads(self.params, batch)
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        self.steps += 1
        new = {}
        for k, v in self.params.tensors.items():
            g = grads[k]
            if self.kind == "sgd":
                self._m[k] = self.momentum * self._m[k] + g
                new[k] = v - self.lr * self._m[k]
            else:
                b1, b2 = self.betas
                self._m[k] = b1 * self._m[k] + (1 - b1) * g
                self._v[k] = b2 * self._v[k] + (1 - b2) * g * g
                mhat = self._m[k] / (1 - b1 ** self.steps)
                vhat = self._v[k] / (1 - b2 ** self.steps)
                new[k] = v - self.lr * mhat / (torch.sqrt(vhat) + 1e-8)
        self.params = ModelParams(self.params.config, new)
        return loss


# -- gradient checking -------------------------------------------------------------


def finite_difference_check(
    loss_fn: Callable[[np.ndarray], float],
    grad: np.ndarray,
    theta: np.ndarray,
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max over components of ``|analytic - central_fd| / max(|analytic|, |central_fd|, floor)``."""
    theta = np.asarray(theta, dtype=np.float64)
    worst = 0.0
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += eps
        minus[i] -= eps
        fd = (loss_fn(plus) - loss_fn(minus)) / (2 * eps)
        denom = max(abs(grad[i]), abs(fd), floor)
        worst = max(worst, abs(grad[i] - fd) / denom)
    return worst


def analytic_gradient(params: ModelParams, batch) -> np.ndarray:
    grads, _ = _grads(params, batch)
    return np.concatenate([grads[k].detach().numpy().ravel() for k in params.tensors])


def check_gradients(params: ModelParams, batch, eps: float = 1e-5) -> float:
    """Compare backpropagated gradients with central finite differences in float64."""
    p64 = params.to(torch.float64)
    theta = p64.flat()
    grad = analytic_gradient(p64, batch)

    def loss_at(vec: np.ndarray) -> float:
        with torch.no_grad():
            return float(batch_loss(p64.with_flat(vec, torch.float64), batch))

    return finite_difference_check(loss_at, grad, theta, eps)
