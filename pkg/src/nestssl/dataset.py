"""Datasets of dense feature vectors with labeled / unlabeled / test roles.

Unlabeled examples may carry a hidden ground-truth label. Training code reads
labels through :attr:`Example.training_label`, which refuses to reveal a hidden
label; only evaluation code calls :meth:`Example.evaluation_label`.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class Role(str, enum.Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    TEST = "test"


class DatasetError(ValueError):
    """Raised for malformed datasets or invalid generator/split arguments."""


class HiddenLabelError(RuntimeError):
    """Raised when training code asks for the label of an unlabeled example."""


@dataclass(frozen=True)
class Task:
    """Task kind. ``n_classes`` is None for regression."""

    kind: str
    n_classes: int | None = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise DatasetError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and (self.n_classes is None or self.n_classes < 2):
            raise DatasetError("classification needs n_classes >= 2")
        if self.kind == "regression" and self.n_classes is not None:
            raise DatasetError("regression takes no n_classes")

    @classmethod
    def classification(cls, n_classes: int) -> "Task":
        return cls("classification", int(n_classes))

    @classmethod
    def regression(cls) -> "Task":
        return cls("regression")

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"


class Example:
    """One data point.

    The label is stored privately; use :attr:`training_label` on training
    paths and :meth:`evaluation_label` for metrics.
    """

    __slots__ = ("id", "features", "role", "_label")

    def __init__(self, id: int, features, role: Role | str, label=None):
        self.id = int(id)
        feats = np.array(features, dtype=np.float64)
        if feats.ndim != 1:
            raise DatasetError(f"example {id}: features must be a vector")
        if not np.all(np.isfinite(feats)):
            raise DatasetError(f"example {id}: non-finite feature")
        feats.setflags(write=False)
        self.features = feats
        self.role = Role(role)
        if label is not None and not math.isfinite(float(label)):
            raise DatasetError(f"example {id}: non-finite label")
        if label is None and self.role is not Role.UNLABELED:
            raise DatasetError(f"{self.role.value} example missing label")
        self._label = label

    @property
    def has_label(self) -> bool:
        return self._label is not None

    @property
    def training_label(self):
        if self.role is Role.UNLABELED:
            raise HiddenLabelError(f"example {self.id} is unlabeled")
        return self._label

    def evaluation_label(self):
        """Ground truth for metrics, including the hidden label of unlabeled data."""
        return self._label

    def with_role(self, role: Role | str) -> "Example":
        return Example(self.id, self.features, role, self._label)

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.id == other.id
            and self.role == other.role
            and self._label == other._label
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash((self.id, self.role))

    def __repr__(self):
        return f"Example(id={self.id}, role={self.role.value}, dim={self.features.size})"


@dataclass(frozen=True, eq=False)
class Dataset:
    task: Task
    dim: int
    examples: tuple[Example, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DatasetError(f"duplicate id {ex.id}")
            seen.add(ex.id)
            if ex.features.size != self.dim:
                raise DatasetError(f"example {ex.id}: expected {self.dim} features, got {ex.features.size}")
            if self.task.is_classification and ex.has_label:
                _check_class(ex.evaluation_label(), self.task.n_classes, f"example {ex.id}")
        if self.task.is_classification:
            present = {int(ex.training_label) for ex in self.of_role(Role.LABELED)}
            if self.of_role(Role.LABELED) and len(present) < self.task.n_classes:
                missing = sorted(set(range(self.task.n_classes)) - present)
                raise DatasetError(f"no labeled example for classes {missing}")

    def __len__(self):
        return len(self.examples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.task == other.task and self.dim == other.dim and self.examples == other.examples

    def of_role(self, role: Role | str) -> list[Example]:
        role = Role(role)
        return [ex for ex in self.examples if ex.role is role]

    def features(self, role: Role | str) -> np.ndarray:
        rows = [ex.features for ex in self.of_role(role)]
        if not rows:
            return np.empty((0, self.dim))
        return np.vstack(rows)

    def ids(self, role: Role | str) -> np.ndarray:
        return np.array([ex.id for ex in self.of_role(role)], dtype=np.int64)

    def training_labels(self, role: Role | str = Role.LABELED) -> np.ndarray:
        dtype = np.int64 if self.task.is_classification else np.float64
        return np.array([ex.training_label for ex in self.of_role(role)], dtype=dtype)

    @cached_property
    def by_id(self) -> dict[int, Example]:
        return {ex.id: ex for ex in self.examples}

    def to_csv(self, path) -> None:
        write_csv(self, path)


def _check_class(label, n_classes, where):
    value = float(label)
    if value != int(value) or not 0 <= int(value) < n_classes:
        raise DatasetError(f"{where}: class index {label!r} out of range [0, {n_classes})")


def _parse_label(text: str, task: Task, row: int):
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"row {row}: label {text!r} is not numeric") from None
    if task.is_classification:
        _check_class(value, task.n_classes, f"row {row}")
        return int(value)
    return value


def load_dataset(path, task: Task) -> Dataset:
    """Read a CSV with header ``id,role,label,x0,...,x{d-1}``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if header[:3] != ["id", "role", "label"] or len(header) < 4:
            raise DatasetError(f"{path}: header must start with id,role,label followed by x0..x{{d-1}}")
        expected = [f"x{i}" for i in range(len(header) - 3)]
        if header[3:] != expected:
            raise DatasetError(f"{path}: feature columns must be named x0..x{len(expected) - 1}")
        dim = len(expected)
        examples = []
        seen: dict[int, int] = {}
        # row numbers count the header as row 1
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 3:
                raise DatasetError(f"row {row_no}: expected {dim + 3} fields, got {len(row)}")
            try:
                ex_id = int(row[0])
            except ValueError:
                raise DatasetError(f"row {row_no}: bad id {row[0]!r}") from None
            if ex_id in seen:
                raise DatasetError(f"row {row_no}: duplicate id {ex_id} (first seen on row {seen[ex_id]})")
            seen[ex_id] = row_no
            try:
                role = Role(row[1])
            except ValueError:
                raise DatasetError(f"row {row_no}: unknown role {row[1]!r}") from None
            label = _parse_label(row[2], task, row_no)
            if label is None and role is not Role.UNLABELED:
                raise DatasetError(f"row {row_no}: {role.value} example missing label")
            try:
                feats = [float(v) for v in row[3:]]
            except ValueError:
                raise DatasetError(f"row {row_no}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in feats):
                raise DatasetError(f"row {row_no}: non-finite feature")
            examples.append(Example(ex_id, feats, role, label))
    return Dataset(task, dim, examples)


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "role", "label"] + [f"x{i}" for i in range(dataset.dim)])
        for ex in dataset.examples:
            label = ex.evaluation_label()
            writer.writerow([ex.id, ex.role.value, "" if label is None else repr(label)]
                            + [repr(float(v)) for v in ex.features])


def synth_gaussian(n_classes: int, dim: int, n_per_class: int, spread: float, seed: int,
                   box: float = 10.0) -> Dataset:
    """Isotropic Gaussian blobs with standard deviation ``spread``; class means
    are uniform in a centred hypercube of side ``box``.

    All examples are returned with role ``test``; use :func:`split_ssl` to assign roles.
    """
    if n_classes < 2 or dim < 2 or n_per_class < 1:
        raise DatasetError("need n_classes >= 2, dim >= 2, n_per_class >= 1")
    if not spread > 0:
        raise DatasetError("spread must be positive")
    rng = np.random.default_rng(seed)
    if not box > 0:
        raise DatasetError("box must be positive")
    means = rng.uniform(-box / 2, box / 2, size=(n_classes, dim))
    examples = []
    for c in range(n_classes):
        pts = means[c] + spread * rng.standard_normal((n_per_class, dim))
        for p in pts:
            examples.append(Example(len(examples), p, Role.TEST, c))
    return Dataset(Task.classification(n_classes), dim, examples)


def regression_weights(dim: int, seed: int) -> np.ndarray:
    """The generating weight vector used by :func:`synth_regression`."""
    return np.random.default_rng([seed, 0]).standard_normal(dim) / np.sqrt(dim)


def synth_regression(dim: int, n: int, noise_sd: float, seed: int) -> Dataset:
    """Linear targets ``y = w.x + eps`` with ``w = regression_weights(dim, seed)``."""
    if n < 10 or dim < 1:
        raise DatasetError("need n >= 10 and dim >= 1")
    if noise_sd < 0:
        raise DatasetError("noise_sd must be nonnegative")
    w = regression_weights(dim, seed)
    rng = np.random.default_rng([seed, 1])
    X = rng.standard_normal((n, dim))
    y = X @ w + noise_sd * rng.standard_normal(n)
    examples = [Example(i, X[i], Role.TEST, float(y[i])) for i in range(n)]
    return Dataset(Task.regression(), dim, examples)


def split_ssl(dataset: Dataset, labels_per_class: int, test_fraction: float, seed: int) -> Dataset:
    """Assign roles: ``labels_per_class`` labeled per class, a stratified test
    hold-out, everything else unlabeled (hidden labels kept for evaluation).

    For regression ``labels_per_class`` is the total number of labeled examples.
    """
    if labels_per_class < 1:
        raise DatasetError("labels_per_class must be >= 1")
    if not 0 <= test_fraction < 1:
        raise DatasetError("test_fraction must lie in [0, 1)")
    for ex in dataset.examples:
        if not ex.has_label:
            raise DatasetError(f"example {ex.id} has no label to split on")
    rng = np.random.default_rng(seed)
    if dataset.task.is_classification:
        groups = [[ex for ex in dataset.examples if ex.evaluation_label() == c]
                  for c in range(dataset.task.n_classes)]
    else:
        groups = [list(dataset.examples)]
    roles: dict[int, Role] = {}
    for c, group in enumerate(groups):
        n_test = int(round(len(group) * test_fraction))
        if labels_per_class + n_test > len(group):
            what = f"class {c}" if dataset.task.is_classification else "dataset"
            raise DatasetError(
                f"{what} has {len(group)} examples; cannot take {labels_per_class} labeled + {n_test} test")
        order = rng.permutation(len(group))
        for rank, pos in enumerate(order):
            if rank < n_test:
                role = Role.TEST
            elif rank < n_test + labels_per_class:
                role = Role.LABELED
            else:
                role = Role.UNLABELED
            roles[group[pos].id] = role
    return Dataset(dataset.task, dataset.dim, [ex.with_role(roles[ex.id]) for ex in dataset.examples])
