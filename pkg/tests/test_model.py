import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import TINY_VOCAB, tiny_batch, tiny_config, tiny_params
from pixseq.codecs import TokenSequence
from pixseq.mixer import TrainingBatch
from pixseq.model import forward, forward_all, init_params, train_step, weighted_nll
from pixseq.model.checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from pixseq.model.network import (
    ModelConfig,
    Trainer,
    TransformerEstimator,
    analytic_gradient,
    batch_loss,
    check_gradients,
    finite_difference_check,
)

# -- objective


def _uniform(n, size=5):
    return [np.full(size, 1 / size) for _ in range(n)]


def test_nll_all_zero_weights():
    seq = TokenSequence([0, 1, 2], [0, 0, 0])
    assert weighted_nll(_uniform(2), seq) == 0.0


def test_nll_single_term():
    seq = TokenSequence([0, 1], [0, 1], prompt_len=1)
    dist = np.array([0.25, 0.5, 0.25])
    assert weighted_nll([dist], seq) == pytest.approx(0.6931471805599453, abs=1e-15)


def test_nll_needs_one_distribution_per_target():
    with pytest.raises(ValueError):
        weighted_nll(_uniform(3), TokenSequence([0, 1, 2], [0, 1, 1]))


def test_nll_zero_probability_is_an_error():
    with pytest.raises(ValueError):
        weighted_nll([np.array([1.0, 0.0])], TokenSequence([0, 1], [0, 1], prompt_len=1))
    assert weighted_nll([np.array([1.0, 0.0])], TokenSequence([0, 1], [0, 0])) == 0.0


@given(st.integers(0, 2**31 - 1))
def test_nll_ignores_zero_weight_positions(seed):
    rng = np.random.default_rng(seed)
    n, size = 6, 7
    ids = rng.integers(0, size, n + 1).tolist()
    weights = [0.0] + [float(w) for w in rng.choice([0.0, 0.1, 1.0], n)]
    dists = [rng.dirichlet(np.ones(size)) for _ in range(n)]
    base = weighted_nll(dists, TokenSequence(ids, weights))
    for j in range(n):
        if weights[j + 1] == 0:
            dists[j] = rng.dirichlet(np.ones(size))
    assert weighted_nll(dists, TokenSequence(ids, weights)) == base


# -- forward

IMG = np.random.default_rng(9).random((4, 4, 1))


def test_forward_normalized_and_deterministic():
    p = tiny_params()
    a = forward(p, IMG, [1, 2, 3])
    assert a.shape == (TINY_VOCAB.total_size,)
    assert abs(a.sum() - 1) < 1e-6 and (a >= 0).all()
    b = forward(tiny_params(), IMG, [1, 2, 3])
    assert np.array_equal(a, b)


def test_fixed_seed_init_is_bit_stable():
    assert np.array_equal(init_params(tiny_config(), seed=5).flat(), init_params(tiny_config(), seed=5).flat())


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, TINY_VOCAB.total_size - 1), min_size=2, max_size=6), st.integers(1, 5))
def test_causality(ids, j):
    j = min(j, len(ids) - 1)
    p = tiny_params()
    full = forward_all(p, IMG, ids)
    short = forward_all(p, IMG, ids[:j])
    np.testing.assert_allclose(full[:j], short, rtol=0, atol=1e-6)


def test_forward_rejects_long_prefix():
    with pytest.raises(ValueError):
        forward(tiny_params(), IMG, list(range(8)))


def test_non_finite_activation_names_layer():
    p = tiny_params()
    t = dict(p.tensors)
    t["patch.w"] = t["patch.w"] * float("nan")
    with pytest.raises(FloatingPointError, match="patch"):
        forward(type(p)(p.config, t), IMG, [1])


def test_bound_estimator_matches_forward():
    p = tiny_params()
    step = TransformerEstimator(p).bind(IMG)
    np.testing.assert_allclose(step([1, 2]), forward(p, IMG, [1, 2]), atol=1e-12)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, image_size=10, patch_size=3)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, num_heads=3)


# -- training


def test_train_step_lr_zero_and_weight_zero_leave_params():
    p = tiny_params()
    same, loss = train_step(p, tiny_batch(), 0.0)
    assert np.array_equal(same.flat(), p.flat()) and loss > 0
    same, _ = train_step(p, tiny_batch(gradient_weight=0.0), 0.5)
    assert np.array_equal(same.flat(), p.flat())
    tr = Trainer(p, 0.1)
    tr.step(tiny_batch(gradient_weight=0.0))
    assert np.array_equal(tr.params.flat(), p.flat())


def test_train_step_returns_unscaled_loss():
    p = tiny_params()
    _, loss = train_step(p, tiny_batch(gradient_weight=0.3), 0.0)
    assert loss == pytest.approx(float(batch_loss(p, tiny_batch(gradient_weight=1.0))), rel=1e-6)


def test_overfit_single_example_strictly_decreasing():
    p = tiny_params(seed=2, scale=0.3)
    one = TrainingBatch(None, tiny_batch().examples[:1], 1.0, TINY_VOCAB.eos_id)
    losses = []
    for _ in range(51):
        p, loss = train_step(p, one, 0.01)
        losses.append(loss)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_trainer_reduces_loss():
    tr = Trainer(tiny_params(seed=3, scale=0.3), 0.01)
    first = tr.step(tiny_batch())
    for _ in range(100):
        last = tr.step(tiny_batch())
    assert last < first


def test_nan_params_rejected():
    p = tiny_params()
    t = dict(p.tensors)
    t["out.b"] = t["out.b"] * float("inf")
    with pytest.raises(FloatingPointError):
        train_step(type(p)(p.config, t), tiny_batch(), 0.1)


# -- gradient checking


def test_gradient_check_tiny_model():
    p = tiny_params()
    assert p.num_params <= 500
    assert check_gradients(p, tiny_batch()) <= 1e-4


def test_zero_weight_sequence_has_zero_gradient():
    b = tiny_batch()
    zero = TrainingBatch(None, [(img, TokenSequence(s.ids, [0.0] * len(s), s.prompt_len)) for img, s in b.examples], 1.0, b.pad_id)
    assert not analytic_gradient(tiny_params().to(torch.float64), zero).any()


def test_linear_probe_matches_finite_difference():
    slope = 3.7
    err = finite_difference_check(lambda th: slope * th[0] + 1.0, np.array([slope]), np.array([0.3]))
    assert err < 1e-9


def test_finite_difference_check_detects_wrong_gradient():
    assert finite_difference_check(lambda th: float(th @ th), np.array([1.0, 0.0]), np.array([1.0, 2.0])) > 0.5


# -- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    p = init_params(tiny_config(), seed=4)
    data = dumps_checkpoint(p)
    assert data.startswith(b"PIXSEQ-CKPT 1\n")
    back = loads_checkpoint(data)
    assert back.config == p.config
    assert np.array_equal(back.flat(), p.flat())
    save_checkpoint(p, tmp_path / "x.ckpt")
    assert np.array_equal(load_checkpoint(tmp_path / "x.ckpt").flat(), p.flat())
    assert dumps_checkpoint(back) == data


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        loads_checkpoint(b"not a checkpoint")
    data = dumps_checkpoint(init_params(tiny_config(), seed=4))
    with pytest.raises(ValueError):
        loads_checkpoint(data[:-4])
