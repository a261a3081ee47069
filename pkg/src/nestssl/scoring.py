"""Neighborhood divergence scores and their cross-iteration aggregation.

For classification ``d(p, y) = KL(onehot(y) || p) = -log p[y]`` with ``p``
floored at :data:`PROB_FLOOR`; for regression ``d(a, b) = |a - b|`` (or the
squared difference when ``squared=True``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Task

PROB_FLOOR = 1e-12


def _check_task(task: Task):
    if not isinstance(task, Task):
        raise TypeError("task must be a Task")


def divergence_d(pred, label, task: Task, squared: bool = False) -> float:
    """Divergence between one prediction and one (hard) label."""
    _check_task(task)
    if task.is_classification:
        p = np.asarray(pred, dtype=np.float64)
        return float(-math.log(max(p[int(label)], PROB_FLOOR)))
    diff = float(pred) - float(label)
    return diff * diff if squared else abs(diff)


def divergence_d_soft(mean_label, label, task: Task, squared: bool = False) -> float:
    """Divergence with a soft first argument (the neighbor label mean)."""
    return divergence_d(mean_label, label, task, squared)


def _neighbor_labels(neighbors):
    return np.asarray(getattr(neighbors, "labels", neighbors))


def unlabeled_divergence(pred, neighbors, task: Task, squared: bool = False) -> float:
    """``D_u``: summed divergence of the prediction from each neighbor label."""
    labels = _neighbor_labels(neighbors)
    if labels.size == 0:
        raise ValueError("empty neighbor set")
    return float(sum(divergence_d(pred, y, task, squared) for y in labels))


def mean_label(labels, task: Task):
    labels = np.asarray(labels)
    if task.is_classification:
        return np.bincount(labels.astype(np.int64), minlength=task.n_classes) / len(labels)
    return float(labels.astype(np.float64).mean())


def labeled_divergence(neighbors, task: Task, squared: bool = False) -> float:
    """``D_l``: summed divergence of each neighbor label from the neighbor mean label."""
    labels = _neighbor_labels(neighbors)
    if labels.size == 0:
        raise ValueError("empty neighbor set")
    ybar = mean_label(labels, task)
    return float(sum(divergence_d_soft(ybar, y, task, squared) for y in labels))


def combined_divergence(d_u: float, d_l: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return d_u + beta * d_l


def aggregate_score(mu_prev: float | None, d_t: float, m: float) -> float:
    """Exponential moving average seeded by the first observation."""
    if not 0 < m <= 1:
        raise ValueError("m must lie in (0, 1]")
    if not math.isfinite(d_t):
        raise ValueError("score must be finite")
    if mu_prev is None:
        return d_t
    return (1.0 - m) * mu_prev + m * d_t


def batch_divergences(preds: np.ndarray, neighbor_labels: np.ndarray, task: Task,
                      squared: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(D_u, D_l)`` for ``n`` queries.

    ``preds`` is ``(n, C)`` probabilities or ``(n,)`` values; ``neighbor_labels``
    is ``(n, k)``. Matches the scalar functions term by term.
    """
    Y = np.asarray(neighbor_labels)
    n, k = Y.shape
    if k == 0:
        raise ValueError("empty neighbor set")
    if task.is_classification:
        Y = Y.astype(np.int64)
        P = np.maximum(np.asarray(preds, dtype=np.float64), PROB_FLOOR)
        d_u = -np.log(np.take_along_axis(P, Y, axis=1)).sum(axis=1)
        counts = np.zeros((n, task.n_classes))
        np.add.at(counts, (np.repeat(np.arange(n), k), Y.ravel()), 1.0)
        ybar = np.maximum(counts / k, PROB_FLOOR)
        d_l = -np.log(np.take_along_axis(ybar, Y, axis=1)).sum(axis=1)
        return d_u, d_l
    Y = Y.astype(np.float64)
    p = np.asarray(preds, dtype=np.float64)[:, None]
    ybar = Y.mean(axis=1, keepdims=True)
    if squared:
        return ((p - Y) ** 2).sum(axis=1), ((ybar - Y) ** 2).sum(axis=1)
    return np.abs(p - Y).sum(axis=1), np.abs(ybar - Y).sum(axis=1)


@dataclass
class ScoreRecord:
    id: int
    d_u: float
    d_l: float
    d_total: float
    mu: float
    iteration: int


class ScoreStore:
    """Aggregated score per unlabeled id, carried across iterations."""

    def __init__(self, m: float = 0.6):
        if not 0 < m <= 1:
            raise ValueError("m must lie in (0, 1]")
        self.m = m
        self.mu: dict[int, float] = {}
        self.iteration: dict[int, int] = {}

    def __len__(self):
        return len(self.mu)

    def __contains__(self, key):
        return key in self.mu

    def get(self, key):
        return self.mu.get(key)

    def update(self, ids, d_u, d_l, beta: float, iteration: int) -> list[ScoreRecord]:
        """Merge one iteration's divergences; returns the new records."""
        records = []
        for i, du, dl in zip(ids, d_u, d_l):
            i = int(i)
            d = combined_divergence(float(du), float(dl), beta)
            mu = aggregate_score(self.mu.get(i), d, self.m)
            self.mu[i] = mu
            self.iteration[i] = iteration
            records.append(ScoreRecord(i, float(du), float(dl), d, mu, iteration))
        return records

    def discard(self, ids):
        for i in ids:
            self.mu.pop(int(i), None)
            self.iteration.pop(int(i), None)

    def to_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for i in sorted(self.mu):
                fh.write(json.dumps({"id": i, "mu": self.mu[i], "iteration": self.iteration[i]}) + "\n")

    @classmethod
    def from_jsonl(cls, path, m: float = 0.6) -> "ScoreStore":
        store = cls(m)
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                store.mu[int(rec["id"])] = float(rec["mu"])
                store.iteration[int(rec["id"])] = int(rec["iteration"])
        return store
