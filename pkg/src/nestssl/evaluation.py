"""Metrics, pseudo-label error and run summaries.

This is the only module that reads hidden labels of unlabeled examples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Example

CLASSIFICATION_METRICS = ("accuracy", "macro_f1", "micro_f1", "roc_auc")
REGRESSION_METRICS = ("rmse",)


@dataclass
class MetricReport:
    metric: str
    value: float
    n: int
    per_class: dict = field(default_factory=dict)


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    return float(np.mean(y_true == np.asarray(y_pred)))


def f1_per_class(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Per-class F1; 0 for a class absent from both truth and prediction."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    out = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        out[c] = 2 * tp / denom if denom else 0.0
    return out


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    return float(f1_per_class(y_true, y_pred, n_classes).mean())


def micro_f1(y_true, y_pred) -> float:
    # single-label multiclass: micro precision = micro recall = accuracy
    return accuracy(y_true, y_pred)


def rmse(y_true, y_pred) -> float:
    diff = np.asarray(y_pred, dtype=np.float64) - np.asarray(y_true, dtype=np.float64)
    return float(math.sqrt(np.mean(diff * diff)))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both positive and negative examples")
    ranks = _average_ranks(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(model, test: list[Example], metric: str = "accuracy") -> MetricReport:
    if not test:
        raise ValueError("empty test set")
    X = np.vstack([ex.features for ex in test])
    y = np.array([ex.evaluation_label() for ex in test])
    if any(v is None for v in y):
        raise ValueError("test examples must be labeled")
    task = model.task
    if task.is_classification and metric not in CLASSIFICATION_METRICS:
        raise ValueError(f"metric {metric!r} does not apply to classification")
    if not task.is_classification and metric not in REGRESSION_METRICS:
        raise ValueError(f"metric {metric!r} does not apply to regression")
    out = model.predict(X)
    if metric == "rmse":
        return MetricReport(metric, rmse(y.astype(np.float64), out), len(test))
    y = y.astype(np.int64)
    pred = np.argmax(out, axis=1)
    per_class = {c: float(v) for c, v in enumerate(f1_per_class(y, pred, task.n_classes))}
    if metric == "accuracy":
        value = accuracy(y, pred)
    elif metric == "macro_f1":
        value = float(np.mean(list(per_class.values())))
    elif metric == "micro_f1":
        value = micro_f1(y, pred)
    else:
        if task.n_classes != 2:
            raise ValueError("roc_auc is defined here for binary tasks only")
        value = roc_auc(y == 1, out[:, 1])
    return MetricReport(metric, value, len(test), per_class)


def hidden_truth(examples: list[Example]) -> dict[int, float]:
    """Ground truth of (typically unlabeled) examples, for evaluation only."""
    return {ex.id: ex.evaluation_label() for ex in examples if ex.has_label}


def pseudo_label_error(batch, truth: dict, task) -> float:
    """Error rate (classification) or RMSE (regression) of ``(id, pseudo)`` pairs."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    missing = [i for i, _ in batch if int(i) not in truth]
    if missing:
        raise KeyError(f"no hidden truth for ids {missing[:5]}")
    y = np.array([truth[int(i)] for i, _ in batch], dtype=np.float64)
    p = np.array([v for _, v in batch], dtype=np.float64)
    if task.is_classification:
        return float(np.mean(p != y))
    return rmse(y, p)


def compare_runs(runs: list[dict]) -> list[dict]:
    """Per-strategy mean and sample std of the final metric and of pseudo-label error.

    Each run is ``{"strategy", "seed", "metric", "traces": [IterationTrace | dict]}``.
    """
    if not runs:
        raise ValueError("need at least one run")
    metrics = {r["metric"] for r in runs}
    if len(metrics) != 1:
        raise ValueError(f"inconsistent metrics across runs: {sorted(metrics)}")
    metric = metrics.pop()
    by_strategy: dict[str, list[dict]] = {}
    for r in runs:
        by_strategy.setdefault(r["strategy"], []).append(r)
    rows = []
    for strategy, group in sorted(by_strategy.items()):
        finals = [_field(r["traces"][-1], "test_metric") for r in group]
        errs = [e for r in group for t in r["traces"]
                if (e := _field(t, "pseudo_error")) is not None]
        rows.append({
            "strategy": strategy,
            "metric": metric,
            "n_runs": len(group),
            "final_mean": _mean(finals),
            "final_std": _std(finals),
            "pseudo_error_mean": _mean(errs) if errs else None,
            "pseudo_error_std": _std(errs) if errs else None,
        })
    return rows


def _field(trace, name):
    return trace[name] if isinstance(trace, dict) else getattr(trace, name)


def _mean(xs) -> float:
    return float(np.mean(xs))


def _std(xs) -> float:
    return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
