import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsrvos.config import ConfigError
from fsrvos.ism import (
    InstancePredictionSet,
    assemble_masks,
    mean_scores,
    select,
    select_all,
    select_multi,
    select_single,
)


def make_preds(scores, h=3, w=3, seed=0):
    scores = np.asarray(scores, dtype=float)
    rng = np.random.default_rng(seed)
    return InstancePredictionSet(scores, rng.normal(size=scores.shape + (h, w)))


def const_preds(means, frames=2):
    return make_preds(np.repeat(np.asarray(means, float)[:, None], frames, axis=1))


def enumerate_single(scores):
    """Scan every instance, keeping the first one whose mean no other exceeds."""
    n, t = scores.shape
    means = [sum(scores[i, j] for j in range(t)) / t for i in range(n)]
    for i in range(n):
        if all(means[i] >= means[k] for k in range(n)):
            return i


def enumerate_multi(scores, sigma):
    """Largest subset whose members all exceed sigma, by checking every subset."""
    n, t = scores.shape
    means = [sum(scores[i, j] for j in range(t)) / t for i in range(n)]
    best = ()
    for r in range(n + 1):
        for subset in itertools.combinations(range(n), r):
            if all(means[i] > sigma for i in subset) and len(subset) > len(best):
                best = subset
    return best


def random_cases(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, t = rng.integers(1, 11), rng.integers(1, 9)
        s = rng.uniform(0.01, 0.99, size=(n, t))
        if rng.random() < 0.3:  # force ties
            s[rng.integers(n)] = s[0]
        yield s, float(rng.uniform(0.05, 0.95))


def test_mean_scores_examples():
    assert np.allclose(mean_scores(make_preds([[0.9, 0.7]])), [0.8])
    s = np.array([[0.3], [0.6]])
    assert np.array_equal(mean_scores(make_preds(s)), [0.3, 0.6])


def test_mean_scores_loop_oracle():
    s = np.random.default_rng(1).uniform(0.01, 0.99, size=(50, 7))
    oracle = [sum(row) / 7 for row in s.tolist()]
    assert np.allclose(mean_scores(make_preds(s)), oracle, rtol=0, atol=1e-15)


def test_select_single_examples():
    assert select_single(const_preds([0.8, 0.5, 0.3])).idx == (0,)
    assert select_single(const_preds([0.5, 0.5])).idx == (0,)
    assert select_single(const_preds([0.2])).idx == (0,)
    assert select_single(const_preds([0.2, 0.6, 0.6])).idx == (1,)


def test_select_multi_examples():
    assert select_multi(const_preds([0.8, 0.55, 0.3]), 0.5).idx == (0, 1)
    empty = select_multi(const_preds([0.4, 0.5, 0.1]), 0.5)
    assert empty.idx == ()
    assert empty.masks.shape == (0, 2, 3, 3)
    assert not empty.union.any()
    assert select_multi(const_preds([0.01, 0.3, 0.9]), 1e-9).idx == (0, 1, 2)


@pytest.mark.parametrize("sigma", [0.0, 1.0, -0.1, 1.5])
def test_select_multi_rejects_sigma(sigma):
    with pytest.raises(ConfigError):
        select_multi(const_preds([0.6]), sigma)


def test_invalid_predictions():
    with pytest.raises(ValueError):
        InstancePredictionSet(np.array([[0.0, 0.5]]), np.zeros((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        InstancePredictionSet(np.array([[0.5, 0.5]]), np.zeros((1, 3, 2, 2)))
    with pytest.raises(ValueError):
        select(const_preds([0.6]), "both")


def test_selectors_match_enumeration_on_1000_cases():
    for scores, sigma in random_cases(1000):
        preds = make_preds(scores, 1, 1)
        assert select_single(preds).idx == (enumerate_single(scores),)
        assert select_multi(preds, sigma).idx == enumerate_multi(scores, sigma)


def test_threshold_monotone():
    for scores, _ in random_cases(1000, seed=5):
        preds = make_preds(scores, 1, 1)
        sigmas = np.linspace(0.05, 0.95, 10)
        for lo, hi in zip(sigmas[:-1], sigmas[1:]):
            assert set(select_multi(preds, hi).idx) <= set(select_multi(preds, lo).idx)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=10), st.floats(0.01, 0.99))
def test_single_inside_multi_when_max_exceeds_sigma(means, sigma):
    preds = const_preds(means)
    if max(means) > sigma:
        assert set(select_single(preds).idx) <= set(select_multi(preds, sigma).idx)


def test_selection_ignores_mask_content():
    s = np.random.default_rng(2).uniform(0.01, 0.99, size=(6, 4))
    a, b = make_preds(s, seed=0), make_preds(s, seed=99)
    assert select_single(a).idx == select_single(b).idx
    assert select_multi(a, 0.5).idx == select_multi(b, 0.5).idx


def test_assemble_disjoint_union():
    logits = -np.ones((2, 1, 4, 4))
    logits[0, 0, :2, :2] = 1.0
    logits[1, 0, 2:, 2:] = 1.0
    preds = InstancePredictionSet(np.full((2, 1), 0.7), logits)
    res = assemble_masks(preds, (0, 1), "multi")
    assert res.union.sum() == res.masks[0].sum() + res.masks[1].sum() == 8


def test_assemble_overlap_loop_oracle():
    rng = np.random.default_rng(3)
    preds = make_preds(rng.uniform(0.1, 0.9, size=(4, 3)), 5, 6)
    res = assemble_masks(preds, (0, 2, 3), "multi")
    for t in range(3):
        for y in range(5):
            for x in range(6):
                expect = any(preds.logits[i, t, y, x] > 0 for i in (0, 2, 3))
                assert res.union[t, y, x] == expect


def test_assemble_empty_and_select_all():
    preds = make_preds(np.full((3, 2), 0.2))
    assert not assemble_masks(preds, (), "multi").union.any()
    assert select_all(preds).idx == (0, 1, 2)


def test_from_model_layout():
    scores = np.array([[0.1, 0.9], [0.2, 0.8], [0.3, 0.7]])  # [T=3, N=2]
    logits = np.zeros((3, 2, 2, 2))
    preds = InstancePredictionSet.from_model(scores, logits)
    assert preds.instances == 2 and preds.frames == 3
    assert select_single(preds).idx == (1,)
