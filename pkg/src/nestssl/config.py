"""Experiment configuration files.

Grammar, one entry per line::

    # comment (also allowed after a value)
    section.key = value

Values are integers, reals, ``true``/``false``, bare or double-quoted strings,
or bracketed comma-separated lists (``[1, 2, 3]``, ``[nest, confidence]``).
Keys are unique and order does not matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import Task, load_dataset, split_ssl, synth_gaussian, synth_regression
from .predictor import PredictorConfig, StudentLossConfig
from .selection import STRATEGIES, SelectionConfig
from .selftrain import SelfTrainConfig

SYNTHETIC_SOURCES = ("synthetic:gaussian", "synthetic:regression")


class ConfigError(ValueError):
    """A config file that cannot be parsed or does not validate."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, list[int], list[str]
    default: object = None
    check: object = None  # callable(value) -> error message or None
    required: bool = False


def _positive(v):
    return None if v > 0 else "must be > 0"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _within(lo, hi, lo_open=False, hi_open=False, what="value"):
    def check(v):
        ok = (lo < v if lo_open else lo <= v) and (v < hi if hi_open else v <= hi)
        if ok:
            return None
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        return f"{what} must lie in {left}{lo}, {hi}{right}"
    return check


def _one_of(options):
    def check(v):
        bad = [x for x in (v if isinstance(v, list) else [v]) if x not in options]
        return f"unknown value(s) {bad}; expected one of {list(options)}" if bad else None
    return check


def _nonempty_ints(v):
    if not v:
        return "must be a nonempty list"
    if len(set(v)) != len(v):
        return "must not contain duplicates"
    return None


SCHEMA: dict[str, Field] = {
    "dataset.source": Field("str", required=True),
    "dataset.task": Field("str", "classification", _one_of(("classification", "regression"))),
    "dataset.n_classes": Field("int", 4, lambda v: None if v >= 2 else "must be >= 2"),
    "dataset.dim": Field("int", 20, lambda v: None if v >= 2 else "must be >= 2"),
    "dataset.n_per_class": Field("int", 520, _positive),
    "dataset.spread": Field("float", 5.0, _positive),
    "dataset.box": Field("float", 10.0, _positive),
    "dataset.n": Field("int", 500, _positive),
    "dataset.noise_sd": Field("float", 0.3, _nonneg),
    "split.labels_per_class": Field("int", 30, _positive),
    "split.test_fraction": Field("float", 0.2, _within(0, 1, hi_open=True)),
    "run.seeds": Field("list[int]", [1], _nonempty_ints),
    "run.strategies": Field("list[str]", ["nest"], _one_of(STRATEGIES)),
    "run.output_dir": Field("str", "runs"),
    "selftrain.T": Field("int", 5, _positive),
    "selftrain.T_1": Field("int", 1000, _positive),
    "selftrain.init_epochs": Field("int", 100, _nonneg),
    "selftrain.metric": Field("str", None, _one_of(("accuracy", "macro_f1", "micro_f1", "roc_auc", "rmse"))),
    "selftrain.refresh_pool_labels": Field("bool", False),
    "selection.k": Field("int", None, _positive),
    "selection.b": Field("int", None, _positive),
    "selection.c": Field("float", 3.0, _positive),
    "selection.beta": Field("float", 0.1, _nonneg),
    "selection.m": Field("float", 0.6, _within(0, 1, lo_open=True, what="m")),
    "selection.mc_passes": Field("int", 10, lambda v: None if v >= 2 else "must be >= 2"),
    "selection.metric": Field("str", "euclidean", _one_of(("euclidean", "cosine"))),
    "selection.inconsistency_threshold": Field("float", None, _positive),
    "selection.seed": Field("int", 0),
    "loss.lam": Field("float", 0.5, _within(0, 1, what="lambda")),
    "loss.gamma": Field("float", 0.9, _within(0, 1, hi_open=True, what="gamma")),
    "loss.threshold_source": Field("str", "student", _one_of(("student", "teacher"))),
    "predictor.hidden_sizes": Field("list[int]", [64, 32],
                                    lambda v: None if v and min(v) >= 1 else "must be nonempty widths >= 1"),
    "predictor.dropout_rate": Field("float", 0.1, _within(0, 1, hi_open=True, what="dropout_rate")),
    "predictor.learning_rate": Field("float", 5e-3, _positive),
    "predictor.batch_size_labeled": Field("int", 32, _positive),
    "predictor.batch_size_unlabeled": Field("int", 64, _positive),
    "predictor.weight_init_seed": Field("int", 0),
    "predictor.activation": Field("str", "relu", _one_of(("relu", "identity"))),
}


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _parse_scalar(text: str, kind: str):
    text = text.strip()
    if kind == "str":
        if len(text) >= 2 and text[0] == text[-1] == '"':
            return text[1:-1]
        if not text:
            raise ValueError("empty value")
        return text
    if kind == "bool":
        if text in ("true", "false"):
            return text == "true"
        raise ValueError(f"expected true or false, got {text!r}")
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if kind == "float":
        try:
            v = float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    raise AssertionError(kind)


def parse_value(text: str, kind: str):
    if kind.startswith("list["):
        text = text.strip()
        if not (text.startswith("[") and text.endswith("]")):
            raise ValueError(f"expected a bracketed list, got {text!r}")
        inner = text[1:-1].strip()
        item = kind[5:-1]
        return [_parse_scalar(p, item) for p in inner.split(",")] if inner else []
    return _parse_scalar(text, kind)


def format_value(value, kind: str) -> str:
    if kind.startswith("list["):
        return "[" + ", ".join(format_value(v, kind[5:-1]) for v in value) + "]"
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "str":
        return f'"{value}"' if (not value or value != value.strip() or any(c in value for c in '#,[]"')) else value
    return str(value)


@dataclass
class Diagnostics:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def parse_config_text(text: str) -> tuple[dict, Diagnostics]:
    """Parse without validation of ranges; returns the explicitly set values."""
    values: dict = {}
    diag = Diagnostics()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            diag.errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in SCHEMA:
            diag.errors.append(f"line {lineno}: unknown field {key!r}")
            continue
        if key in values:
            diag.errors.append(f"line {lineno}: duplicate field {key!r}")
            continue
        try:
            values[key] = parse_value(val, SCHEMA[key].kind)
        except ValueError as exc:
            diag.errors.append(f"{key}: {exc}")
    return values, diag


def resolve_source(source: str, base_dir=None) -> Path:
    path = Path(source)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return path


def validate_values(values: dict, diag: Diagnostics | None = None, base_dir=None) -> Diagnostics:
    """Range and cross-field checks; relative file sources resolve against ``base_dir``."""
    diag = diag or Diagnostics()
    for key, spec in SCHEMA.items():
        if key in values:
            if spec.check is not None:
                msg = spec.check(values[key])
                if msg:
                    diag.errors.append(f"{key}: {msg}")
        elif spec.required:
            diag.errors.append(f"{key}: required field missing")
    strategies = values.get("run.strategies", SCHEMA["run.strategies"].default)
    if "nest" in strategies and "selection.k" not in values:
        diag.errors.append("selection.k: required field missing (strategy nest)")

    source = values.get("dataset.source")
    task = values.get("dataset.task", "classification")
    if source is not None and source not in SYNTHETIC_SOURCES:
        if source.startswith("synthetic:"):
            diag.errors.append(f"dataset.source: unknown synthetic source {source!r}; expected one of "
                               f"{list(SYNTHETIC_SOURCES)}")
        elif not resolve_source(source, base_dir).is_file():
            diag.errors.append(f"dataset.source: file not found: {source}")
    if source == "synthetic:regression":
        task = "regression"
    if task == "regression":
        bad = [s for s in strategies if s != "nest"]
        if bad:
            diag.errors.append(f"run.strategies: {bad} apply to classification only")
        if values.get("selftrain.metric", "rmse") != "rmse":
            diag.errors.append("selftrain.metric: regression runs use rmse")
    elif values.get("selftrain.metric") == "rmse":
        diag.errors.append("selftrain.metric: rmse applies to regression only")

    for key, spec in SCHEMA.items():
        if key not in values and not spec.required and spec.default is not None:
            diag.warnings.append(f"{key} not set; using default {format_value(spec.default, spec.kind)}")
    return diag


def validate_text(text: str, base_dir=None) -> tuple[dict, Diagnostics]:
    values, diag = parse_config_text(text)
    return values, validate_values(values, diag, base_dir)


def validate_config(path) -> tuple[dict, Diagnostics]:
    """Read and validate a config file; raises ``OSError`` if unreadable."""
    path = Path(path)
    return validate_text(path.read_text(encoding="utf-8"), path.parent)


def dump_config(values: dict) -> str:
    """Serialize explicitly set fields in schema order."""
    lines = [f"{key} = {format_value(values[key], SCHEMA[key].kind)}" for key in SCHEMA if key in values]
    return "\n".join(lines) + "\n"


@dataclass
class RunConfig:
    values: dict
    base_dir: Path | None = None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values, diag = validate_config(path)
        if not diag.ok:
            raise ConfigError(diag.errors)
        return cls(values, Path(path).parent)

    def get(self, key):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key].default

    @property
    def seeds(self) -> list[int]:
        return list(self.get("run.seeds"))

    @property
    def strategies(self) -> list[str]:
        return list(self.get("run.strategies"))

    @property
    def output_dir(self) -> str:
        return self.get("run.output_dir")

    def self_train_config(self, strategy: str, seed: int) -> SelfTrainConfig:
        g = self.get
        return SelfTrainConfig(
            T=g("selftrain.T"),
            selection=SelectionConfig(
                strategy=strategy, b=g("selection.b"), c=g("selection.c"), k=g("selection.k") or 10,
                beta=g("selection.beta"), m=g("selection.m"), mc_passes=g("selection.mc_passes"),
                metric=g("selection.metric"), inconsistency_threshold=g("selection.inconsistency_threshold"),
                seed=g("selection.seed")),
            loss=StudentLossConfig(lam=g("loss.lam"), gamma=g("loss.gamma"), steps=g("selftrain.T_1"),
                                   threshold_source=g("loss.threshold_source")),
            predictor=PredictorConfig(
                hidden_sizes=tuple(g("predictor.hidden_sizes")), dropout_rate=g("predictor.dropout_rate"),
                learning_rate=g("predictor.learning_rate"), batch_size_labeled=g("predictor.batch_size_labeled"),
                batch_size_unlabeled=g("predictor.batch_size_unlabeled"),
                weight_init_seed=g("predictor.weight_init_seed"), activation=g("predictor.activation")),
            init_epochs=g("selftrain.init_epochs"),
            seed=seed,
            metric=g("selftrain.metric"),
            refresh_pool_labels=g("selftrain.refresh_pool_labels"),
        )

    def dataset(self, seed: int):
        """Synthetic sources are generated and split per seed; files keep their own roles."""
        g = self.get
        source = g("dataset.source")
        if source == "synthetic:gaussian":
            base = synth_gaussian(g("dataset.n_classes"), g("dataset.dim"), g("dataset.n_per_class"),
                                  g("dataset.spread"), seed, box=g("dataset.box"))
        elif source == "synthetic:regression":
            base = synth_regression(g("dataset.dim"), g("dataset.n"), g("dataset.noise_sd"), seed)
        else:
            if g("dataset.task") == "regression":
                task = Task.regression()
            else:
                task = Task.classification(g("dataset.n_classes"))
            return load_dataset(resolve_source(source, self.base_dir), task)
        return split_ssl(base, g("split.labels_per_class"), g("split.test_fraction"), seed)
