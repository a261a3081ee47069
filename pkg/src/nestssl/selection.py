"""Turn per-sample scores into a selected batch.

Three strategies share one sampler, a sequential weighted draw without
replacement:

* ``nest``: weights ``W - mu`` with ``W`` the largest aggregated score;
* ``confidence``: weights ``max_c p_c``;
* ``uncertainty``: weights ``1 - BALD`` from MC-dropout passes, floored at 0.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .scoring import PROB_FLOOR

logger = logging.getLogger(__name__)

STRATEGIES = ("nest", "confidence", "uncertainty")


@dataclass
class SelectionConfig:
    strategy: str = "nest"
    b: int | None = None
    c: float = 3.0
    k: int = 10
    beta: float = 0.1
    m: float = 0.6
    mc_passes: int = 10
    metric: str = "euclidean"
    inconsistency_threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.b is not None and self.b < 1:
            raise ValueError("b must be >= 1")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not 0 < self.m <= 1:
            raise ValueError("m must lie in (0, 1]")
        if self.strategy == "uncertainty" and self.mc_passes < 2:
            raise ValueError("mc_passes must be >= 2 for uncertainty selection")

    def budget(self, n_labeled: int) -> int:
        """Selection size ``b``, defaulting to ``round(c * n_labeled)``."""
        if self.b is not None:
            return self.b
        return max(1, int(round(self.c * n_labeled)))


@dataclass
class SelectionResult:
    chosen: np.ndarray
    probabilities: np.ndarray
    candidate_ids: np.ndarray
    strategy: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.chosen)


def weighted_sample_without_replacement(weights, b: int, rng: np.random.Generator) -> np.ndarray:
    """Positions drawn one at a time with probability ``w_i / sum(remaining w)``.

    When ``b`` exceeds the number of positive weights, all positive-weight
    positions are returned (in draw order).
    """
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be a vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    n_pos = int(np.count_nonzero(w > 0))
    take = min(int(b), n_pos)
    out = np.empty(take, dtype=np.int64)
    for draw in range(take):
        cum = np.cumsum(w)
        u = rng.random() * cum[-1]
        i = int(np.searchsorted(cum, u, side="right"))
        # guard u landing on the upper edge after rounding
        while i >= len(w) or w[i] == 0:
            i -= 1
        out[draw] = i
        w[i] = 0.0
    return out


def _result(ids, weights, b, rng, strategy, meta=None) -> SelectionResult:
    ids = np.asarray(ids, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    pos = weighted_sample_without_replacement(w, b, rng)
    return SelectionResult(ids[pos], w / w.sum(), ids, strategy, meta or {})


def nest_weights(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    return mu.max() - mu


def select_nest(ids, mu, b: int, rng: np.random.Generator) -> SelectionResult:
    """Sample with probability proportional to ``max(mu) - mu``."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.size == 0:
        raise ValueError("no candidates")
    w = nest_weights(mu)
    meta = {"W": float(mu.max())}
    if not np.any(w > 0):
        warnings.warn("all aggregated scores are equal; falling back to uniform sampling",
                      RuntimeWarning, stacklevel=2)
        w = np.ones_like(mu)
        meta["uniform_fallback"] = True
    return _result(ids, w, b, rng, "nest", meta)


def select_confidence(ids, probs, b: int, rng: np.random.Generator) -> SelectionResult:
    """Sample with probability proportional to the top class probability."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("confidence selection needs class probabilities (classification only)")
    return _result(ids, probs.max(axis=1), b, rng, "confidence")


def _check_simplices(P, atol=1e-6):
    if np.any(P < -atol) or not np.allclose(P.sum(axis=-1), 1.0, atol=atol):
        raise ValueError("invalid probability simplex")


def bald_scores(mc_probs) -> np.ndarray:
    """BALD mutual information for an ``(M, n, C)`` stack of MC passes."""
    P = np.asarray(mc_probs, dtype=np.float64)
    if P.ndim == 2:
        P = P[:, None, :]
    if P.shape[0] < 2:
        raise ValueError("BALD needs at least 2 passes")
    _check_simplices(P)
    Pf = np.maximum(P, PROB_FLOOR)
    pbar = np.maximum(P.mean(axis=0), PROB_FLOOR)
    predictive = -np.sum(pbar * np.log(pbar), axis=-1)
    expected = np.mean(np.sum(Pf * np.log(Pf), axis=-1), axis=0)
    score = predictive + expected
    return np.where((score < 0) & (score > -1e-12), 0.0, score)


def bald_score(mc_preds) -> float:
    """BALD for one sample from ``M`` simplices of shape ``(M, C)``."""
    return float(bald_scores(np.asarray(mc_preds, dtype=np.float64)[:, None, :])[0])


def mc_dropout_probs(model, X, passes: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([model.predict(X, dropout_active=True, rng=rng) for _ in range(passes)])


def select_uncertainty(model, ids, X, b: int, passes: int, rng: np.random.Generator) -> SelectionResult:
    """Sample with probability proportional to ``max(0, 1 - BALD)``."""
    if not model.task.is_classification:
        raise ValueError("uncertainty selection requires a classification model")
    if model.dropout_rate <= 0:
        raise ValueError("uncertainty selection requires dropout_rate > 0")
    bald = bald_scores(mc_dropout_probs(model, X, passes, rng))
    w = np.maximum(1.0 - bald, 0.0)
    if not np.any(w > 0):
        warnings.warn("every candidate has BALD >= 1; falling back to uniform sampling",
                      RuntimeWarning, stacklevel=2)
        w = np.ones_like(w)
    return _result(ids, w, b, rng, "uncertainty", {"bald_mean": float(bald.mean())})
