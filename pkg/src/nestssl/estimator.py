"""scikit-learn style wrappers around the self-training loop.

Unlabeled rows are marked in ``y``: ``-1`` for the classifier (the same
convention as ``sklearn.semi_supervised``) and ``NaN`` for the regressor.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted, column_or_1d

from .dataset import Dataset, Example, Role, Task
from .predictor import PredictorConfig, StudentLossConfig
from .selection import SelectionConfig
from .selftrain import SelfTrainConfig, run_self_training

UNLABELED = -1


class _SelfTrainingBase(BaseEstimator):
    def __init__(self, strategy="nest", n_iterations=5, inner_steps=1000, budget=None, budget_ratio=3.0,
                 n_neighbors=10, beta=0.1, m=0.6, gamma=0.9, lam=0.5, mc_passes=10,
                 hidden_sizes=(64, 32), dropout_rate=0.1, learning_rate=5e-3, init_epochs=100,
                 distance="euclidean", random_state=0):
        self.strategy = strategy
        self.n_iterations = n_iterations
        self.inner_steps = inner_steps
        self.budget = budget
        self.budget_ratio = budget_ratio
        self.n_neighbors = n_neighbors
        self.beta = beta
        self.m = m
        self.gamma = gamma
        self.lam = lam
        self.mc_passes = mc_passes
        self.hidden_sizes = hidden_sizes
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.init_epochs = init_epochs
        self.distance = distance
        self.random_state = random_state

    def _config(self) -> SelfTrainConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return SelfTrainConfig(
            T=self.n_iterations,
            selection=SelectionConfig(strategy=self.strategy, b=self.budget, c=self.budget_ratio,
                                      k=self.n_neighbors, beta=self.beta, m=self.m,
                                      mc_passes=self.mc_passes, metric=self.distance),
            loss=StudentLossConfig(lam=self.lam, gamma=self.gamma, steps=self.inner_steps),
            predictor=PredictorConfig(hidden_sizes=tuple(self.hidden_sizes), dropout_rate=self.dropout_rate,
                                      learning_rate=self.learning_rate),
            init_epochs=self.init_epochs,
            seed=seed,
            track_pseudo_error=False,
        )

    def _fit_encoded(self, X, targets, labeled_mask, task):
        examples = [Example(i, X[i], Role.LABELED if labeled_mask[i] else Role.UNLABELED,
                            targets[i] if labeled_mask[i] else None) for i in range(len(X))]
        data = Dataset(task, X.shape[1], examples)
        self.model_, self.traces_ = run_self_training(self._config(), data)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def transform(self, X):
        """Penultimate-layer embedding of the fitted network."""
        X = self._check_X(X)
        return self.model_.embed(X)


class NeSTClassifier(ClassifierMixin, _SelfTrainingBase):
    """Self-training classifier; rows with ``y == -1`` are treated as unlabeled."""

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = column_or_1d(y)
        check_consistent_length(X, y)
        labeled = y != UNLABELED
        if not labeled.any():
            raise ValueError("at least one labeled sample is required")
        self.classes_, encoded = np.unique(y[labeled], return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes among labeled samples")
        targets = np.zeros(len(y), dtype=np.int64)
        targets[labeled] = encoded
        return self._fit_encoded(X, targets, labeled, Task.classification(len(self.classes_)))

    def predict_proba(self, X):
        X = self._check_X(X)
        return self.model_.predict(X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class NeSTRegressor(RegressorMixin, _SelfTrainingBase):
    """Self-training regressor; rows with ``NaN`` targets are treated as unlabeled.

    Only the ``nest`` strategy applies to regression.
    """

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = column_or_1d(np.asarray(y, dtype=np.float64))
        check_consistent_length(X, y)
        labeled = ~np.isnan(y)
        if not labeled.any():
            raise ValueError("at least one labeled sample is required")
        if not np.isfinite(y[labeled]).all():
            raise ValueError("labeled targets must be finite")
        return self._fit_encoded(X, y, labeled, Task.regression())

    def predict(self, X):
        X = self._check_X(X)
        return self.model_.predict(X)
