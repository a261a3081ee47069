"""Teacher-student self-training loop with pluggable sample selection."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation
from .dataset import Dataset, Role
from .neighborhood import build_index, query_knn_batch
from .predictor import (Adam, Predictor, PredictorConfig, StudentLossConfig, clone_to_teacher,
                        fit_supervised, train_student)
from .scoring import ScoreStore, batch_divergences
from .selection import SelectionConfig, select_confidence, select_nest, select_uncertainty

logger = logging.getLogger(__name__)


@dataclass
class SelfTrainConfig:
    T: int = 5
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    loss: StudentLossConfig = field(default_factory=StudentLossConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    init_epochs: int = 100
    seed: int = 0
    metric: str | None = None
    refresh_pool_labels: bool = False
    track_pseudo_error: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.loss.steps < 1:
            raise ValueError("T_1 (loss.steps) must be >= 1")
        if self.init_epochs < 0:
            raise ValueError("init_epochs must be >= 0")

    @property
    def T_1(self) -> int:
        return self.loss.steps


@dataclass
class PseudoLabeledPool:
    """Accumulated selected examples with their pseudo labels."""

    ids: list = field(default_factory=list)
    features: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    added: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def add(self, ids, X, pseudo, iteration: int):
        known = set(self.ids)
        for i, x, y in zip(ids, X, pseudo):
            if int(i) in known:
                raise ValueError(f"id {int(i)} already in the pseudo-labeled pool")
            self.ids.append(int(i))
            self.features.append(np.asarray(x))
            self.labels.append(y.item() if hasattr(y, "item") else y)
            self.added.append(iteration)

    def arrays(self, dim: int, classification: bool):
        dtype = np.int64 if classification else np.float64
        if not self.ids:
            return np.empty((0, dim)), np.empty(0, dtype=dtype)
        return np.vstack(self.features), np.array(self.labels, dtype=dtype)

    def relabel(self, pseudo):
        self.labels = [y.item() if hasattr(y, "item") else y for y in pseudo]


@dataclass
class IterationTrace:
    iteration: int
    strategy: str
    selected_ids: list
    selection_probabilities: list
    pool_size: int
    n_candidates: int
    metric: str
    teacher_metric: float | None
    test_metric: float | None
    pseudo_error: float | None = None
    candidate_pseudo_error: float | None = None
    note: str | None = None
    seconds: float = 0.0

    def to_json(self, include_timing: bool = False) -> str:
        d = asdict(self)
        if not include_timing:
            d.pop("seconds")
        return json.dumps(d, sort_keys=True)


def generate_pseudo_labels(teacher: Predictor, X) -> np.ndarray:
    """Argmax class (lowest index on ties) or the scalar output; dropout off."""
    out = teacher.predict(np.asarray(X, dtype=np.float64))
    if teacher.task.is_classification:
        return np.argmax(out, axis=1)
    return np.asarray(out, dtype=np.float64)


def _default_metric(task) -> str:
    return "accuracy" if task.is_classification else "rmse"


def _test_metric(model, test, metric):
    if not test:
        return None
    return evaluation.evaluate(model, test, metric).value


def _nest_mu(teacher, X_l, ids_l, y_l, X_c, ids_c, sel: SelectionConfig, store: ScoreStore, t):
    if sel.k > len(ids_l):
        raise ValueError(f"k={sel.k} exceeds the number of labeled examples ({len(ids_l)})")
    index = build_index(ids_l, teacher.embed(X_l), y_l, sel.metric)
    positions, _ = query_knn_batch(index, teacher.embed(X_c), sel.k)
    d_u, d_l = batch_divergences(teacher.predict(X_c), y_l[positions], teacher.task)
    keep = np.ones(len(ids_c), dtype=bool)
    if sel.inconsistency_threshold is not None:
        d_now = d_u + sel.beta * d_l
        for j, i in enumerate(ids_c):
            prev = store.get(int(i))
            if prev is not None and abs(d_now[j] - prev) > sel.inconsistency_threshold:
                keep[j] = False
    store.update(ids_c, d_u, d_l, sel.beta, t)
    mu = np.array([store.mu[int(i)] for i in ids_c])
    return mu, keep


def run_self_training(config: SelfTrainConfig, data: Dataset, score_store: ScoreStore | None = None):
    """Run the full loop; returns ``(final_student, traces)``.

    Iteration ``t`` scores the remaining candidates with the current teacher,
    selects a batch, pseudo-labels only that batch, trains the student for
    ``T_1`` steps on the mixed loss and copies it into the teacher.
    """
    task = data.task
    sel = config.selection
    metric = config.metric or _default_metric(task)
    if sel.strategy in ("confidence", "uncertainty") and not task.is_classification:
        raise ValueError(f"{sel.strategy} selection is defined for classification only")

    labeled = data.of_role(Role.LABELED)
    unlabeled = data.of_role(Role.UNLABELED)
    test = data.of_role(Role.TEST)
    if not labeled:
        raise ValueError("dataset has no labeled examples")
    X_l = data.features(Role.LABELED)
    y_l = data.training_labels(Role.LABELED)
    ids_l = data.ids(Role.LABELED)
    X_u = data.features(Role.UNLABELED)
    ids_u = data.ids(Role.UNLABELED)
    truth = evaluation.hidden_truth(unlabeled) if config.track_pseudo_error else {}

    pcfg = config.predictor
    init_rng = np.random.default_rng([config.seed, pcfg.weight_init_seed, 1])
    sel_rng = np.random.default_rng([config.seed, sel.seed, 2])
    train_rng = np.random.default_rng([config.seed, 3])

    student = Predictor(task, data.dim, pcfg.hidden_sizes, pcfg.dropout_rate, pcfg.activation,
                        seed=[config.seed, pcfg.weight_init_seed])
    fit_supervised(student, X_l, y_l, pcfg, config.init_epochs, init_rng)
    teacher = clone_to_teacher(student)
    opt = Adam(student.params, lr=pcfg.learning_rate)

    store = score_store if score_store is not None else ScoreStore(sel.m)
    pool = PseudoLabeledPool()
    candidate = np.ones(len(ids_u), dtype=bool)
    budget = sel.budget(len(labeled))
    traces: list[IterationTrace] = []

    for t in range(1, config.T + 1):
        start = time.perf_counter()
        teacher_metric = _test_metric(teacher, test, metric)
        cpos = np.flatnonzero(candidate)
        ids_c = ids_u[cpos]
        note = None
        chosen = np.empty(0, dtype=np.int64)
        probs_chosen: list = []
        cand_err = None
        batch_err = None
        if len(cpos) == 0:
            note = "candidate pool exhausted"
            logger.info("iteration %d: %s; training without new selections", t, note)
        else:
            X_c = X_u[cpos]
            if truth:
                cand_err = evaluation.pseudo_label_error(
                    zip(ids_c, generate_pseudo_labels(teacher, X_c)), truth, task)
            if sel.strategy == "nest":
                mu, keep = _nest_mu(teacher, X_l, ids_l, y_l, X_c, ids_c, sel, store, t)
                if not keep.any():
                    keep[:] = True
                result = select_nest(ids_c[keep], mu[keep], budget, sel_rng)
            elif sel.strategy == "confidence":
                result = select_confidence(ids_c, teacher.predict(X_c), budget, sel_rng)
            else:
                result = select_uncertainty(teacher, ids_c, X_c, budget, sel.mc_passes, sel_rng)
            chosen = result.chosen
            lookup = dict(zip(result.candidate_ids.tolist(), result.probabilities.tolist()))
            probs_chosen = [lookup[int(i)] for i in chosen]
            pos_of = {int(i): p for p, i in zip(cpos, ids_c)}
            chosen_pos = np.array([pos_of[int(i)] for i in chosen], dtype=np.int64)
            pseudo = generate_pseudo_labels(teacher, X_u[chosen_pos])
            pool.add(chosen, X_u[chosen_pos], pseudo, t)
            candidate[chosen_pos] = False
            store.discard(chosen)
            if truth:
                batch_err = evaluation.pseudo_label_error(zip(chosen, pseudo), truth, task)
            if len(chosen) < budget:
                note = "candidate pool exhausted"

        if config.refresh_pool_labels and len(pool):
            pool.relabel(generate_pseudo_labels(teacher, np.vstack(pool.features)))

        X_p, y_p = pool.arrays(data.dim, task.is_classification)
        train_student(student, X_l, y_l, X_p, y_p, config.loss, pcfg, train_rng,
                      teacher=teacher, optimizer=opt)
        teacher = clone_to_teacher(student)

        trace = IterationTrace(
            iteration=t,
            strategy=sel.strategy,
            selected_ids=[int(i) for i in chosen],
            selection_probabilities=probs_chosen,
            pool_size=len(pool),
            n_candidates=int(len(cpos)),
            metric=metric,
            teacher_metric=teacher_metric,
            test_metric=_test_metric(student, test, metric),
            pseudo_error=batch_err,
            candidate_pseudo_error=cand_err,
            note=note,
            seconds=time.perf_counter() - start,
        )
        logger.info("iteration %d [%s]: selected %d, pool %d, %s %.4f", t, sel.strategy,
                    len(chosen), len(pool), metric,
                    float("nan") if trace.test_metric is None else trace.test_metric)
        traces.append(trace)
    return student, traces


def write_trace(traces, path) -> None:
    """JSON-lines run log, one record per iteration (timing omitted for reproducibility)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for tr in traces:
            fh.write(tr.to_json() + "\n")


def read_trace(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
