from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable, Sequence

import numpy as np

from ..codecs import TokenSequence
from ..vocab import Vocabulary

_PAD = -1


class NgramEstimator:
    """Count-based next-token estimator keyed on (prompt token, last k tokens).

    Ignores the image. With ``smoothing=0`` and a single training sequence every
    seen context yields a one-hot distribution, which makes it a deterministic oracle
    for the sampling and decoding pipeline. Unseen contexts fall back to uniform.
    """

    def __init__(self, vocab: Vocabulary, k: int = 8, smoothing: float = 0.0):
        if k < 1:
            raise ValueError("context length must be >= 1")
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.vocab = vocab
        self.k = k
        self.smoothing = smoothing
        self.counts: dict[tuple, Counter] = defaultdict(Counter)

    def _key(self, prefix: Sequence[int]) -> tuple:
        ctx = [int(t) for t in prefix[-self.k :]]
        ctx = [_PAD] * (self.k - len(ctx)) + ctx
        return (int(prefix[0]) if len(prefix) else _PAD, tuple(ctx))

    def fit(self, sequences: Iterable[TokenSequence]) -> "NgramEstimator":
        for seq in sequences:
            for j in range(max(1, seq.prompt_len), len(seq)):
                self.counts[self._key(seq.ids[:j])][seq.ids[j]] += 1
        return self

    def next_token_probs(self, image, prefix: Sequence[int]) -> np.ndarray:
        size = self.vocab.total_size
        dist = np.full(size, self.smoothing, dtype=np.float64)
        for tok, c in self.counts.get(self._key(prefix), {}).items():
            dist[tok] += c
        total = dist.sum()
        if total == 0.0:
            return np.full(size, 1.0 / size)
        return dist / total
