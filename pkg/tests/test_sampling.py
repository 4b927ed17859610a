import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixseq import codecs
from pixseq.annotations import InstanceAnnotation, Task
from pixseq.codecs import TaskPrompt
from pixseq.geometry import BBox, Polygon
from pixseq.model import NgramEstimator, SamplerConfig, generate, generate_parallel, nucleus_filter, sample_token
from pixseq.model.sampling import grammar_mask
from pixseq.vocab import TokenKind, VocabConfig, build_vocabulary

V = build_vocabulary(VocabConfig(16, 3, 256, 3))
BOX = BBox(0.2, 0.2, 0.8, 0.8)


class Uniform:
    def next_token_probs(self, image, prefix):
        return np.full(V.total_size, 1.0 / V.total_size)


class Broken:
    def next_token_probs(self, image, prefix):
        return np.full(V.total_size, 1.0)


def test_nucleus_examples():
    d = np.array([0.5, 0.3, 0.15, 0.05])
    np.testing.assert_allclose(nucleus_filter(d, 0.8), [0.625, 0.375, 0, 0], atol=1e-15)
    assert np.array_equal(nucleus_filter(d, 1.0), d)
    one = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(nucleus_filter(one, 0.3), one)


def test_nucleus_ties_prefer_lower_id():
    out = nucleus_filter(np.array([0.25, 0.25, 0.25, 0.25]), 0.5)
    assert out.tolist() == [0.5, 0.5, 0.0, 0.0]


def test_nucleus_rejects_bad_p():
    with pytest.raises(ValueError):
        nucleus_filter(np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        SamplerConfig(p=1.5)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda xs: sum(xs) > 1e-3), st.floats(0.01, 1.0))
def test_nucleus_support_is_minimal(raw, p):
    d = np.array(raw) / sum(raw)
    out = nucleus_filter(d, p)
    assert abs(out.sum() - 1) < 1e-9
    kept = np.flatnonzero(out)
    assert d[kept].sum() >= p - 1e-9
    # dropping the smallest kept entry would fall below p
    if len(kept) > 1:
        assert d[kept].sum() - d[kept].min() < p + 1e-9
    assert (out[kept] > 0).all()


def test_sample_token_never_leaves_nucleus():
    rng = np.random.default_rng(0)
    d = np.array([0.5, 0.3, 0.15, 0.05])
    draws = {sample_token(d, 0.8, rng) for _ in range(2000)}
    assert draws == {0, 1}


def test_grammar_detect_structure():
    k = V.keypoint_count
    m = grammar_mask(Task.DETECT, [], V, 50, False)
    assert m[V.eos_id] and m[0] and not m[V.class_base]
    m = grammar_mask(Task.DETECT, [1, 2, 3, 4], V, 50, False)
    assert m[V.class_base] and m[V.noise_id] and not m[0] and not m[V.eos_id]
    assert grammar_mask(Task.DETECT, [], V, 5, False).sum() == 1
    m = grammar_mask(Task.KEYPOINT, [1] * (2 * k), V, 50, False)
    assert np.flatnonzero(m).tolist() == [V.eos_id]
    assert not grammar_mask(Task.KEYPOINT, [], V, 50, False)[V.invisible_id]
    assert grammar_mask(Task.KEYPOINT, [], V, 50, True)[V.invisible_id]


def test_grammar_segment_closes_only_after_full_polygon():
    assert not grammar_mask(Task.SEGMENT, [1, 2, 3, 4], V, 50, False)[V.eos_id]
    assert grammar_mask(Task.SEGMENT, [1, 2, 3, 4, 5, 6], V, 50, False)[V.separator_id]
    assert not grammar_mask(Task.SEGMENT, [1, 2, 3, 4, 5, 6, 7], V, 50, False)[V.eos_id]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_uniform_model_outputs_always_parse(seed):
    rng = np.random.default_rng(seed)
    cfg = SamplerConfig(p=1.0, max_len=40)
    for prompt in (TaskPrompt(Task.DETECT), TaskPrompt(Task.SEGMENT, BOX), TaskPrompt(Task.KEYPOINT, BOX), TaskPrompt(Task.CAPTION)):
        body, probs = generate(Uniform(), None, prompt, cfg, rng, V)
        assert len(body) == len(probs) and len(body) + len(prompt.ids(V)) <= 40
        assert all(0 < q <= 1 for q in probs)
        if prompt.task is Task.DETECT:
            for j in range(4, len(body) - 1, 5):
                assert V.classify(body[j]) in (TokenKind.CLASS_LABEL, TokenKind.NOISE_CLASS)
            assert len(body) % 5 == 1 and body[-1] == V.eos_id
        if prompt.task is Task.KEYPOINT:
            assert V.invisible_id not in body
            assert None not in codecs.decode_keypoints(body, V)


def test_generate_rejects_unnormalized_estimator():
    with pytest.raises(ValueError):
        generate(Broken(), None, TaskPrompt(Task.CAPTION), SamplerConfig(), np.random.default_rng(0), V)


def test_generate_rejects_short_keypoint_budget():
    with pytest.raises(ValueError):
        generate(Uniform(), None, TaskPrompt(Task.KEYPOINT, BOX), SamplerConfig(max_len=8), np.random.default_rng(0), V)


def test_ngram_regenerates_training_sequences():
    rng = np.random.default_rng(0)
    inst = InstanceAnnotation(BOX, 1, polygons=(Polygon([(0.2, 0.2), (0.2, 0.8), (0.8, 0.5)]),), keypoints=((0.3, 0.4), None, (0.7, 0.2)))
    seqs = [
        codecs.encode_detection([inst, InstanceAnnotation(BBox(0.1, 0.1, 0.3, 0.3), 2)], V, rng),
        codecs.encode_segmentation(inst, V, rng),
        codecs.encode_caption("a blue triangle", V),
    ]
    est = NgramEstimator(V, k=64).fit(seqs)
    for seq in seqs:
        prompt = TaskPrompt.from_ids(seq.ids[: seq.prompt_len], V)
        body, probs = generate(est, None, prompt, SamplerConfig(p=1.0), np.random.default_rng(1), V)
        assert body == seq.body
        assert all(q == 1.0 for q in probs)


def test_ngram_normalizes_and_smooths():
    est = NgramEstimator(V, k=2, smoothing=0.5).fit([codecs.encode_caption("ab", V)])
    d = est.next_token_probs(None, [V.special(TokenKind.PROMPT_CAPTION)])
    assert abs(d.sum() - 1) < 1e-12 and d.argmax() == V.text_base + 97
    assert (d > 0).all()
    unseen = NgramEstimator(V).next_token_probs(None, [0])
    assert np.allclose(unseen, 1 / V.total_size)


def test_parallel_equals_sequential():
    prompts = [TaskPrompt(Task.SEGMENT, BOX)] * 3 + [TaskPrompt(Task.CAPTION)]
    cfg = SamplerConfig(p=0.9, max_len=30)
    par = generate_parallel(Uniform(), None, prompts, cfg, np.random.default_rng(7), V, max_workers=4)
    children = np.random.default_rng(7).spawn(len(prompts))
    seq = [generate(Uniform(), None, p, cfg, c, V) for p, c in zip(prompts, children)]
    assert par == seq
    (one,) = generate_parallel(Uniform(), None, prompts[:1], cfg, np.random.default_rng(7), V)
    assert one == generate(Uniform(), None, prompts[0], cfg, np.random.default_rng(7).spawn(1)[0], V)


def test_parallel_errors_per_prompt():
    prompts = [TaskPrompt(Task.CAPTION), TaskPrompt(Task.KEYPOINT, BOX)]
    cfg = SamplerConfig(max_len=8)
    out = generate_parallel(Uniform(), None, prompts, cfg, np.random.default_rng(0), V, return_exceptions=True)
    assert isinstance(out[1], ValueError) and isinstance(out[0], tuple)
    with pytest.raises(ValueError):
        generate_parallel(Uniform(), None, prompts, cfg, np.random.default_rng(0), V)
    with pytest.raises(ValueError):
        generate_parallel(Uniform(), None, [], cfg, np.random.default_rng(0), V)
