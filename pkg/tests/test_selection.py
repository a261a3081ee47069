import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import exact_sequence_probs, sampler_deviations

from nestssl.dataset import Task
from nestssl.predictor import Predictor
from nestssl.selection import (
    SelectionConfig,
    bald_score,
    bald_scores,
    nest_weights,
    select_confidence,
    select_nest,
    select_uncertainty,
    weighted_sample_without_replacement,
)

weights_sampler = weighted_sample_without_replacement


def assert_matches_enumeration(weights, b, n_draws=100_000, seed=0):
    worst, unexpected = sampler_deviations(weights_sampler, weights, b, n_draws, seed)
    assert not unexpected
    assert worst <= 3.0


def test_exact_enumeration_hand_values():
    probs = exact_sequence_probs([3, 2, 1], 2)
    assert probs[(0, 1)] == pytest.approx(3 / 6 * 2 / 3)
    assert probs[(2, 0)] == pytest.approx(1 / 6 * 3 / 5)
    assert sum(probs.values()) == pytest.approx(1.0)


def test_sampler_matches_enumeration_321():
    assert_matches_enumeration([3, 2, 1], 2)


@pytest.mark.parametrize("weights, b", [([1, 4], 1), ([0.5, 0.0, 2.0, 1.0], 2), ([1, 1, 2, 3, 5], 2)])
def test_sampler_matches_enumeration_small_pools(weights, b):
    assert_matches_enumeration(weights, b, seed=len(weights))


def test_degenerate_mass():
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert weighted_sample_without_replacement([1, 0, 0], 1, rng).tolist() == [0]


def test_two_equal_weights_both_chosen_in_both_orders():
    rng = np.random.default_rng(0)
    orders = {tuple(weighted_sample_without_replacement([1, 1], 2, rng).tolist()) for _ in range(50)}
    assert orders == {(0, 1), (1, 0)}


def test_b_larger_than_support_returns_positive_weight_items():
    out = weighted_sample_without_replacement([0, 2, 0, 1], 10, np.random.default_rng(0))
    assert sorted(out.tolist()) == [1, 3]


def test_all_zero_weights_rejected():
    with pytest.raises(ValueError, match="zero"):
        weighted_sample_without_replacement([0, 0], 1, np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30).filter(lambda w: any(x > 0 for x in w)),
       st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_sampler_no_duplicates_positive_support(weights, b, seed):
    out = weighted_sample_without_replacement(weights, b, np.random.default_rng(seed))
    assert len(set(out.tolist())) == len(out)
    assert all(weights[i] > 0 for i in out)
    assert len(out) == min(b, sum(w > 0 for w in weights))


def test_nest_first_draw_probabilities():
    res = select_nest([10, 11, 12], [0.1, 0.5, 0.9], 1, np.random.default_rng(0))
    np.testing.assert_allclose(nest_weights([0.1, 0.5, 0.9]), [0.8, 0.4, 0.0])
    np.testing.assert_allclose(res.probabilities, [2 / 3, 1 / 3, 0.0])
    assert res.chosen[0] != 12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=20), st.floats(-50, 50))
def test_nest_shift_invariance(mu, c):
    mu = np.asarray(mu)
    # differences below float resolution of the shifted values are not preserved by addition
    assume(np.ptp(mu) > 1e-6)
    a = select_nest(np.arange(len(mu)), mu, 1, np.random.default_rng(0)).probabilities
    b = select_nest(np.arange(len(mu)), mu + c, 1, np.random.default_rng(0)).probabilities
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.sum(), 1.0)


def test_nest_shift_by_five_same_selection():
    mu = np.array([0.3, 1.2, 0.7, 2.0, 0.1])
    ids = np.arange(5) + 100
    a = select_nest(ids, mu, 3, np.random.default_rng(4))
    b = select_nest(ids, mu + 5.0, 3, np.random.default_rng(4))
    np.testing.assert_allclose(a.probabilities, b.probabilities)
    assert a.chosen.tolist() == b.chosen.tolist()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=2, max_size=20, unique=True))
def test_nest_ordering(mu):
    mu = np.asarray(mu) / 100.0
    p = select_nest(np.arange(len(mu)), mu, 1, np.random.default_rng(0)).probabilities
    order = np.argsort(mu)
    assert np.all(np.diff(p[order]) < 0)


def test_nest_excludes_exactly_the_max():
    mu = np.array([0.2, 0.4, 3.0, 0.1, 0.9])
    res = select_nest(np.arange(5), mu, 4, np.random.default_rng(1))
    assert sorted(res.chosen.tolist()) == [0, 1, 3, 4]


def test_nest_all_equal_falls_back_to_uniform():
    with pytest.warns(RuntimeWarning, match="uniform"):
        res = select_nest([1, 2, 3], [0.5, 0.5, 0.5], 2, np.random.default_rng(0))
    np.testing.assert_allclose(res.probabilities, [1 / 3] * 3)
    assert len(res) == 2


def test_confidence_probabilities():
    res = select_confidence([0, 1], [[0.9, 0.1], [0.6, 0.4]], 1, np.random.default_rng(0))
    np.testing.assert_allclose(res.probabilities, [0.6, 0.4])
    uni = select_confidence([0, 1, 2], np.full((3, 4), 0.25), 1, np.random.default_rng(0))
    np.testing.assert_allclose(uni.probabilities, [1 / 3] * 3)
    one = select_confidence([9], [[0.3, 0.7]], 1, np.random.default_rng(0))
    assert one.chosen.tolist() == [9]


def test_confidence_rejects_regression_outputs():
    with pytest.raises(ValueError, match="classification"):
        select_confidence([0, 1], [0.3, 1.2], 1, np.random.default_rng(0))


def test_bald_identical_passes_zero():
    assert bald_score(np.tile([0.2, 0.5, 0.3], (10, 1))) == 0.0


def test_bald_total_disagreement():
    # entropy of the mean is log 2; each pass contributes (1 - 1e-12)*log(1 - 1e-12)
    # for the ~1 entry plus 1e-12*log(1e-12) for the floored zero entry
    eps = 1e-12
    mean_pass_term = (1.0 * math.log(1.0) + eps * math.log(eps))
    expected = math.log(2) + mean_pass_term
    assert bald_score([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(expected, abs=1e-15)
    assert bald_score([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(0.6931471805599453, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_bald_nonnegative(M, C, seed):
    P = np.random.default_rng(seed).dirichlet(np.ones(C), size=M)
    assert bald_score(P) >= -1e-12


def test_bald_invalid_simplex():
    with pytest.raises(ValueError):
        bald_score([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        bald_score([[0.5, 0.5]])


def test_bald_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    stack = rng.dirichlet(np.ones(3), size=(6, 4))
    np.testing.assert_allclose(bald_scores(stack), [bald_score(stack[:, j]) for j in range(4)])


class _FixedBald:
    """Stand-in model whose MC passes give a chosen BALD per sample."""

    task = Task.classification(2)
    dropout_rate = 0.5

    def __init__(self, disagree):
        self.disagree = np.asarray(disagree, dtype=bool)
        self.calls = 0

    def predict(self, X, dropout_active=False, rng=None):
        n = len(X)
        flip = self.calls % 2 == 1
        self.calls += 1
        P = np.tile([1.0, 0.0], (n, 1))
        P[self.disagree & flip] = [0.0, 1.0]
        return P


def test_uncertainty_weights_one_minus_bald():
    # one confident sample (BALD 0), the others maximally split between two passes
    model = _FixedBald([False, True, True])
    res = select_uncertainty(model, [0, 1, 2], np.zeros((3, 1)), 1, 2, np.random.default_rng(0))
    w = 1 - np.array([0.0, math.log(2), math.log(2)])
    np.testing.assert_allclose(res.probabilities, w / w.sum(), atol=1e-10)


def test_uncertainty_double_weight_example():
    # BALD 0 against BALD 0.5: weights 1 and 0.5
    weights = np.maximum(1 - np.array([0.0, 0.5, 0.5]), 0)
    p = weights / weights.sum()
    assert p[0] == pytest.approx(2 * p[1])


def test_uncertainty_equal_bald_uniform():
    model = Predictor(Task.classification(3), 4, (8,), dropout_rate=0.0001, seed=0)
    model.weights[-1][:] = 0.0
    res = select_uncertainty(model, np.arange(5), np.ones((5, 4)), 2, 10, np.random.default_rng(0))
    np.testing.assert_allclose(res.probabilities, 0.2)


def test_uncertainty_requires_dropout():
    model = Predictor(Task.classification(2), 3, (4,), dropout_rate=0.0, seed=0)
    with pytest.raises(ValueError, match="dropout"):
        select_uncertainty(model, [0], np.zeros((1, 3)), 1, 10, np.random.default_rng(0))


def test_uncertainty_requires_classification():
    model = Predictor(Task.regression(), 3, (4,), dropout_rate=0.2, seed=0)
    with pytest.raises(ValueError, match="classification"):
        select_uncertainty(model, [0], np.zeros((1, 3)), 1, 10, np.random.default_rng(0))


def test_selection_config_defaults_and_validation():
    cfg = SelectionConfig()
    assert cfg.beta == 0.1 and cfg.m == 0.6 and cfg.mc_passes == 10
    assert cfg.budget(120) == 360
    assert SelectionConfig(b=7).budget(120) == 7
    for bad in ({"strategy": "random"}, {"k": 0}, {"m": 0.0}, {"strategy": "uncertainty", "mc_passes": 1}):
        with pytest.raises(ValueError):
            SelectionConfig(**bad)


def test_normalization_across_strategies():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), size=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = select_nest(np.arange(8), rng.random(8), 3, rng)
    b = select_confidence(np.arange(8), probs, 3, rng)
    for res in (a, b):
        assert res.probabilities.sum() == pytest.approx(1.0)
        assert len(set(res.chosen.tolist())) == len(res.chosen)
