"""Feed-forward network f(x; theta) with dropout, trained by Adam.

The penultimate activations serve as the embedding used for neighbor search.
Everything is float64 numpy with hand-written backprop.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Example, Task

CHECKPOINT_FORMAT = "nestssl-mlp"
CHECKPOINT_VERSION = 1

_LOG_FLOOR = 1e-300


class TrainingDivergedError(FloatingPointError):
    """Loss became non-finite during training."""


@dataclass
class PredictorConfig:
    hidden_sizes: tuple[int, ...] = (64, 32)
    dropout_rate: float = 0.1
    learning_rate: float = 5e-3
    batch_size_labeled: int = 32
    batch_size_unlabeled: int = 64
    weight_init_seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a nonempty list of widths >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be finite and positive")
        if self.batch_size_labeled < 1 or self.batch_size_unlabeled < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.activation not in ("relu", "identity"):
            raise ValueError("activation must be 'relu' or 'identity'")


@dataclass
class StudentLossConfig:
    """Mixed self-training loss ``lam * L_sup + (1 - lam) * E[1{p_y > gamma} * l_sup]``."""

    lam: float = 0.5
    gamma: float = 0.9
    steps: int = 1000
    threshold_source: str = "student"

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.threshold_source not in ("student", "teacher"):
            raise ValueError("threshold_source must be 'student' or 'teacher'")


class Adam:
    """Adam with bias correction, updating a list of arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Predictor:
    """MLP: hidden layers (activation + dropout), then a softmax or scalar head."""

    def __init__(self, task: Task, dim: int, hidden_sizes=(64, 32), dropout_rate=0.1,
                 activation="relu", seed=0):
        self.task = task
        self.dim = int(dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.dropout_rate = float(dropout_rate)
        self.activation = activation
        rng = np.random.default_rng(seed)
        sizes = [self.dim, *self.hidden_sizes, self.n_outputs]
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            # He-uniform for rectified layers, Glorot-uniform for the head
            limit = math.sqrt(6.0 / (fan_in + fan_out)) if last or activation == "identity" \
                else math.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def from_config(cls, task: Task, dim: int, config: PredictorConfig) -> "Predictor":
        return cls(task, dim, config.hidden_sizes, config.dropout_rate, config.activation,
                   config.weight_init_seed)

    @property
    def n_classes(self):
        return self.task.n_classes

    @property
    def n_outputs(self) -> int:
        return self.task.n_classes if self.task.is_classification else 1

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @property
    def embedding_dim(self) -> int:
        return self.hidden_sizes[-1]

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def _check_input(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}, got shape {np.shape(X)}")
        return X, single

    def draw_masks(self, n: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Inverted-dropout masks for ``n`` rows, one per hidden layer."""
        keep = 1.0 - self.dropout_rate
        return [(rng.random((n, h)) < keep) / keep for h in self.hidden_sizes]

    def forward(self, X, masks=None):
        """Return ``(output, hidden_activations)``. Output rows are simplices
        for classification, shape ``(n,)`` values for regression."""
        h = X
        hidden = []
        for i, (W, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            h = self._act(h @ W + b)
            if masks is not None:
                h = h * masks[i]
            hidden.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        if self.task.is_classification:
            return _softmax(z), hidden
        return z[:, 0], hidden

    def logits(self, X, masks=None):
        h = X
        for i, (W, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            h = self._act(h @ W + b)
            if masks is not None:
                h = h * masks[i]
        return h @ self.weights[-1] + self.biases[-1]

    def predict(self, X, dropout_active=False, rng=None):
        X, single = self._check_input(X)
        masks = None
        if dropout_active and self.dropout_rate > 0:
            if rng is None:
                raise ValueError("dropout_active requires an rng")
            masks = self.draw_masks(X.shape[0], rng)
        out, _ = self.forward(X, masks)
        return out[0] if single else out

    def embed(self, X):
        X, single = self._check_input(X)
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = self._act(h @ W + b)
        return h[0] if single else h

    def per_sample_loss(self, X, targets, masks=None) -> np.ndarray:
        """Cross-entropy (classification) or squared error (regression) per row."""
        z = self.logits(X, masks)
        if self.task.is_classification:
            logp = _log_softmax(z)
            return -logp[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
        return (z[:, 0] - targets) ** 2

    def loss_and_grad(self, X, targets, sample_weights, masks=None):
        """Weighted loss ``sum_i w_i * l_i`` and its gradient, ordered like :attr:`params`."""
        acts = [X]
        pre = []
        h = X
        for i, (W, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            z = h @ W + b
            pre.append(z)
            h = self._act(z)
            if masks is not None:
                h = h * masks[i]
            acts.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        w = np.asarray(sample_weights, dtype=np.float64)
        if self.task.is_classification:
            idx = np.asarray(targets, dtype=np.int64)
            logp = _log_softmax(z)
            rows = np.arange(len(idx))
            loss = -np.sum(w * logp[rows, idx])
            dz = np.exp(logp)
            dz[rows, idx] -= 1.0
            dz *= w[:, None]
        else:
            r = z[:, 0] - targets
            loss = np.sum(w * r * r)
            dz = (2.0 * w * r)[:, None]

        n_layers = len(self.weights)
        gW = [None] * n_layers
        gb = [None] * n_layers
        delta = dz
        for layer in range(n_layers - 1, -1, -1):
            gW[layer] = acts[layer].T @ delta
            gb[layer] = delta.sum(axis=0)
            if layer == 0:
                break
            delta = delta @ self.weights[layer].T
            if masks is not None:
                delta = delta * masks[layer - 1]
            if self.activation == "relu":
                delta = delta * (pre[layer - 1] > 0)
        return float(loss), gW + gb

    def copy(self) -> "Predictor":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "task": self.task.kind,
            "n_classes": self.task.n_classes,
            "dim": self.dim,
            "hidden_sizes": list(self.hidden_sizes),
            "dropout_rate": self.dropout_rate,
            "activation": self.activation,
            "layers": [
                {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "Predictor":
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a nestssl model checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
        task = Task(blob["task"], blob["n_classes"])
        model = cls(task, blob["dim"], blob["hidden_sizes"], blob["dropout_rate"], blob["activation"])
        for i, layer in enumerate(blob["layers"]):
            shape = tuple(layer["shape"])
            if shape != model.weights[i].shape:
                raise ValueError(f"layer {i}: shape {shape} does not match architecture")
            model.weights[i] = np.array(layer["weight"], dtype=np.float64).reshape(shape)
            model.biases[i] = np.array(layer["bias"], dtype=np.float64)
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Predictor":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_parameters(self, other: "Predictor") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.params, other.params))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _examples_to_arrays(examples: list[Example], task: Task):
    X = np.vstack([ex.features for ex in examples])
    dtype = np.int64 if task.is_classification else np.float64
    y = np.array([ex.training_label for ex in examples], dtype=dtype)
    return X, y


def _check_finite(loss, step):
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} at step {step}")


def fit_supervised(model: Predictor, X, y, config: PredictorConfig, epochs: int,
                   rng: np.random.Generator) -> Predictor:
    """Minimise mean supervised loss over ``(X, y)`` with minibatch Adam, in place."""
    opt = Adam(model.params, lr=config.learning_rate)
    n = X.shape[0]
    bs = min(config.batch_size_labeled, n)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = order[start:start + bs]
            masks = model.draw_masks(len(batch), rng) if model.dropout_rate > 0 else None
            weights = np.full(len(batch), 1.0 / len(batch))
            loss, grads = model.loss_and_grad(X[batch], y[batch], weights, masks)
            _check_finite(loss, step)
            opt.step(model.params, grads)
            step += 1
    return model


def init_supervised(labeled: list[Example], config: PredictorConfig, epochs: int, task: Task,
                    rng: np.random.Generator | None = None) -> Predictor:
    """Train the initial model on labeled data only.

    With ``epochs=0`` the seeded random initialization is returned.
    """
    if not labeled:
        raise ValueError("labeled set is empty")
    X, y = _examples_to_arrays(labeled, task)
    model = Predictor.from_config(task, X.shape[1], config)
    if rng is None:
        rng = np.random.default_rng([config.weight_init_seed, 1])
    return fit_supervised(model, X, y, config, epochs, rng)


def predict(model: Predictor, x, dropout_active=False, rng=None):
    return model.predict(x, dropout_active=dropout_active, rng=rng)


def embed(model: Predictor, x):
    return model.embed(x)


def clone_to_teacher(student: Predictor) -> Predictor:
    return student.copy()


def threshold_mask(model: Predictor, X, pseudo, gamma: float) -> np.ndarray:
    """``1{[f(x; model)]_pseudo > gamma}`` from a dropout-free pass."""
    probs, _ = model.forward(X)
    return (probs[np.arange(len(pseudo)), pseudo] > gamma).astype(np.float64)


@dataclass
class MixedBatch:
    """One step's inputs for the mixed loss."""

    X_labeled: np.ndarray
    y_labeled: np.ndarray
    X_pool: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    y_pool: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def has_pool(self):
        return self.X_pool.shape[0] > 0


def _mixed_weights(model, batch: MixedBatch, loss_cfg: StudentLossConfig, teacher=None):
    n_l = batch.X_labeled.shape[0]
    w_lab = np.full(n_l, loss_cfg.lam / n_l) if n_l else np.empty(0)
    if not batch.has_pool:
        return batch.X_labeled, batch.y_labeled, w_lab
    n_p = batch.X_pool.shape[0]
    if model.task.is_classification:
        src = teacher if loss_cfg.threshold_source == "teacher" else model
        if src is None:
            raise ValueError("threshold_source='teacher' needs the teacher model")
        gate = threshold_mask(src, batch.X_pool, batch.y_pool.astype(np.int64), loss_cfg.gamma)
    else:
        gate = np.ones(n_p)
    w_pool = (1.0 - loss_cfg.lam) * gate / n_p
    X = np.vstack([batch.X_labeled, batch.X_pool]) if n_l else batch.X_pool
    dtype = np.int64 if model.task.is_classification else np.float64
    y = np.concatenate([batch.y_labeled.astype(dtype), batch.y_pool.astype(dtype)])
    return X, y, np.concatenate([w_lab, w_pool])


def mixed_loss(model: Predictor, batch: MixedBatch, loss_cfg: StudentLossConfig,
               masks=None, teacher=None) -> float:
    X, y, w = _mixed_weights(model, batch, loss_cfg, teacher)
    return float(np.sum(w * model.per_sample_loss(X, y, masks)))


def mixed_loss_and_grad(model: Predictor, batch: MixedBatch, loss_cfg: StudentLossConfig,
                        masks=None, teacher=None):
    """Mixed loss and gradient; the threshold gate is treated as a constant."""
    X, y, w = _mixed_weights(model, batch, loss_cfg, teacher)
    return model.loss_and_grad(X, y, w, masks)


def train_student(model: Predictor, X_labeled, y_labeled, X_pool, y_pool,
                  loss_cfg: StudentLossConfig, opt_cfg: PredictorConfig,
                  rng: np.random.Generator, teacher: Predictor | None = None,
                  optimizer: Adam | None = None) -> Predictor:
    """Run ``loss_cfg.steps`` Adam steps on the mixed loss, in place.

    Each step draws a labeled minibatch and, when the pool is nonempty, a pool
    minibatch (both without replacement within the step).
    """
    opt = optimizer or Adam(model.params, lr=opt_cfg.learning_rate)
    n_l = X_labeled.shape[0]
    n_p = 0 if X_pool is None else X_pool.shape[0]
    bs_l = min(opt_cfg.batch_size_labeled, n_l)
    bs_p = min(opt_cfg.batch_size_unlabeled, n_p)
    for step in range(loss_cfg.steps):
        li = rng.choice(n_l, size=bs_l, replace=False)
        if n_p:
            pi = rng.choice(n_p, size=bs_p, replace=False)
            batch = MixedBatch(X_labeled[li], y_labeled[li], X_pool[pi], y_pool[pi])
        else:
            batch = MixedBatch(X_labeled[li], y_labeled[li])
        n_rows = bs_l + (bs_p if n_p else 0)
        masks = model.draw_masks(n_rows, rng) if model.dropout_rate > 0 else None
        loss, grads = mixed_loss_and_grad(model, batch, loss_cfg, masks, teacher)
        _check_finite(loss, step)
        opt.step(model.params, grads)
    return model


def config_dict(config) -> dict:
    d = asdict(config)
    if "hidden_sizes" in d:
        d["hidden_sizes"] = list(d["hidden_sizes"])
    return d
