"""Small shared builders for model tests."""
import numpy as np

from pixseq.codecs import TokenSequence
from pixseq.mixer import TrainingBatch
from pixseq.model.network import ModelConfig, init_params
from pixseq.vocab import TokenKind, VocabConfig, build_vocabulary

TINY_VOCAB = build_vocabulary(VocabConfig(4, 2, 2, 2))


def tiny_config(**kw):
    base = dict(vocab_size=TINY_VOCAB.total_size, image_size=4, channels=1, patch_size=2, d_model=4,
                num_heads=1, enc_layers=1, dec_layers=1, mlp_hidden=4, max_len=6)
    base.update(kw)
    return ModelConfig(**base)


def tiny_params(seed=0, scale=0.5):
    p = init_params(tiny_config(), seed=seed)
    return p.with_flat(np.random.default_rng(seed).normal(0.0, scale, p.num_params))


def tiny_batch(seed=1, gradient_weight=0.7):
    v = TINY_VOCAB
    rng = np.random.default_rng(seed)
    det = v.special(TokenKind.PROMPT_DETECT)
    ex = [
        (rng.random((4, 4, 1)), TokenSequence([det, 1, 2, 0, 3, v.class_base, v.eos_id], [0, 1, 1, 1, 1, 1, 1], 1)),
        (rng.random((4, 4, 1)), TokenSequence([det, 3, v.eos_id], [0, 1, 0.1], 1)),
    ]
    return TrainingBatch(None, ex, gradient_weight, v.eos_id)
