from __future__ import annotations

from typing import Sequence

import numpy as np

from ..codecs import TokenSequence


def weighted_nll(probs_per_step: Sequence[np.ndarray], seq: TokenSequence) -> float:
    """Negative of the weighted log-likelihood of ``seq``.

    ``probs_per_step[j - 1]`` is the predicted distribution for ``seq.ids[j]`` given
    ``seq.ids[:j]``, for j = 1 .. len(seq) - 1. Zero-weight positions are skipped, so
    whatever is predicted there never enters the loss.
    """
    if len(probs_per_step) != len(seq) - 1:
        raise ValueError(f"expected {len(seq) - 1} distributions, got {len(probs_per_step)}")
    loss = 0.0
    for j in range(1, len(seq)):
        w = seq.weights[j]
        if w == 0.0:
            continue
        p = float(probs_per_step[j - 1][seq.ids[j]])
        if p <= 0.0:
            raise ValueError(f"zero probability for target {seq.ids[j]} at position {j} with weight {w}")
        loss -= w * np.log(p)
    return float(loss)
