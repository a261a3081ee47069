import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pair_count_auc

from nestssl.dataset import Example, Task
from nestssl.evaluation import (
    accuracy,
    compare_runs,
    evaluate,
    hidden_truth,
    macro_f1,
    micro_f1,
    pseudo_label_error,
    rmse,
    roc_auc,
)
from nestssl.predictor import Predictor


def test_auc_worked_example():
    assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.1]) == 0.75


def test_auc_perfect_and_tied():
    assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc([0, 1, 0, 1], [0.5] * 4) == 0.5


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_auc([1, 1], [0.2, 0.3])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**31 - 1))
def test_auc_matches_pair_counting(n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, n)
    truth[0], truth[1] = 0, 1
    # coarse scores so ties occur
    scores = rng.integers(0, 6, n) / 5.0
    assert roc_auc(truth, scores) == pytest.approx(pair_count_auc(truth, scores), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance(n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, n)
    truth[0], truth[1] = 0, 1
    scores = rng.normal(size=n)
    assert roc_auc(truth, np.exp(3 * scores) + 1) == roc_auc(truth, scores)


def test_accuracy_and_f1_examples():
    y, p = [0, 0, 1, 1, 2], [0, 1, 1, 1, 0]
    assert accuracy(y, p) == 0.6
    assert micro_f1(y, p) == 0.6
    # per-class F1: 0.5, 0.8, 0.0
    assert macro_f1(y, p, 3) == pytest.approx((0.5 + 0.8 + 0.0) / 3)


def test_rmse_example():
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))


def test_pseudo_label_error_classification():
    truth = {1: 0, 2: 1, 3: 1, 4: 2}
    assert pseudo_label_error([(1, 0), (2, 0), (3, 1), (4, 0)], truth, Task.classification(3)) == 0.5
    assert pseudo_label_error([(1, 0)], truth, Task.classification(3)) == 0.0


def test_pseudo_label_error_regression_and_errors():
    truth = {1: 1.0, 2: -1.0}
    assert pseudo_label_error([(1, 2.0), (2, -1.0)], truth, Task.regression()) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(ValueError):
        pseudo_label_error([], truth, Task.regression())
    with pytest.raises(KeyError):
        pseudo_label_error([(9, 0.0)], truth, Task.regression())


def test_hidden_truth_reads_unlabeled_labels():
    exs = [Example(1, [0.0], "unlabeled", 2), Example(2, [0.0], "unlabeled")]
    assert hidden_truth(exs) == {1: 2}


def test_evaluate_metrics_and_mismatch():
    model = Predictor(Task.classification(2), 2, (4,), dropout_rate=0.0, seed=0)
    test = [Example(i, [float(i), 1.0], "test", i % 2) for i in range(6)]
    rep = evaluate(model, test, "accuracy")
    assert 0.0 <= rep.value <= 1.0 and rep.n == 6
    assert set(rep.per_class) == {0, 1}
    auc = evaluate(model, test, "roc_auc").value
    assert 0.0 <= auc <= 1.0
    with pytest.raises(ValueError):
        evaluate(model, test, "rmse")
    reg = Predictor(Task.regression(), 2, (4,), dropout_rate=0.0, seed=0)
    with pytest.raises(ValueError):
        evaluate(reg, [Example(0, [0.0, 0.0], "test", 1.0)], "accuracy")


def _run(strategy, seed, final, errs, metric="accuracy"):
    traces = [{"test_metric": 0.5, "pseudo_error": e} for e in errs[:-1]]
    traces.append({"test_metric": final, "pseudo_error": errs[-1]})
    return {"strategy": strategy, "seed": seed, "metric": metric, "traces": traces}


def test_compare_runs_summary():
    rows = compare_runs([_run("nest", 0, 0.80, [0.1, 0.2]), _run("nest", 1, 0.90, [0.3, 0.2]),
                         _run("confidence", 0, 0.70, [0.4])])
    assert [r["strategy"] for r in rows] == ["confidence", "nest"]
    nest = rows[1]
    assert nest["final_mean"] == pytest.approx(0.85)
    assert nest["final_std"] == pytest.approx(0.0707106781, abs=1e-9)
    assert nest["pseudo_error_mean"] == pytest.approx(0.2)
    assert rows[0]["final_std"] == 0.0


def test_compare_runs_rejects_mixed_metrics():
    with pytest.raises(ValueError, match="inconsistent"):
        compare_runs([_run("nest", 0, 0.8, [0.1]), _run("nest", 1, 0.5, [0.1], metric="rmse")])
