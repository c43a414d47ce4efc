"""Datasets, partitioning and the local learners run on each client.

Three linear models cover the three task kinds: least squares for
regression, multinomial logistic (softmax) for classification and an
L2-regularised hinge-loss SVM for +/-1 labels. All of them expose the same
flat-weight interface so the protocol layer never needs to know which one
it is aggregating.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _random
from ._validation import NumericDivergenceError, check_finite, check_positive


class TaskKind(str, enum.Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"
    BINARY_MARGIN = "binary_margin"


class ModelKind(str, enum.Enum):
    LINEAR_REGRESSION = "linear_regression"
    SOFTMAX_CLASSIFIER = "softmax_classifier"
    LINEAR_SVM = "linear_svm"


MODEL_FOR_TASK = {
    TaskKind.REGRESSION: ModelKind.LINEAR_REGRESSION,
    TaskKind.CLASSIFICATION: ModelKind.SOFTMAX_CLASSIFIER,
    TaskKind.BINARY_MARGIN: ModelKind.LINEAR_SVM,
}


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    task_kind: TaskKind
    num_classes: int | None = None

    def __post_init__(self):
        self.task_kind = TaskKind(self.task_kind)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float).ravel()
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs at least one row and one feature")
        if self.labels.shape[0] != n:
            raise ValueError(
                f"features have {n} rows but labels have {self.labels.shape[0]}"
            )
        if self.task_kind is TaskKind.CLASSIFICATION:
            if not np.all(self.labels == np.round(self.labels)) or self.labels.min() < 0:
                raise ValueError("classification labels must be non-negative integers")
            k = int(self.labels.max()) + 1
            if self.num_classes is None:
                self.num_classes = max(k, 2)
            elif k > self.num_classes:
                raise ValueError(f"label {k - 1} outside [0, {self.num_classes})")
        elif self.task_kind is TaskKind.BINARY_MARGIN:
            if not np.all(np.isin(self.labels, (-1.0, 1.0))):
                raise ValueError("binary-margin labels must be exactly -1 or +1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx], self.task_kind, self.num_classes)


@dataclass(frozen=True)
class Partition:
    client_id: int
    sample_indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.sample_indices)


@dataclass
class ModelParams:
    weights: np.ndarray
    version: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.version < 0:
            raise ValueError("model version must be >= 0")

    def copy(self, version: int | None = None) -> "ModelParams":
        return ModelParams(self.weights.copy(), self.version if version is None else version)


@dataclass(frozen=True)
class LearnerSpec:
    model_kind: ModelKind
    learning_rate: float
    epochs: int
    batch_size: int
    reg: float = 1e-4
    fit_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        check_positive(self.learning_rate, "learning_rate", allow_zero=True)
        check_positive(self.epochs, "epochs", integer=True)
        check_positive(self.batch_size, "batch_size", integer=True)
        check_positive(self.reg, "reg", allow_zero=True)


# -- partitioning -----------------------------------------------------------

def partition_sizes(n, m, mean_fraction_std, rng):
    """Gaussian local-data sizes, clamped to >= 1 and rescaled to sum to n."""
    mu = n / m
    raw = rng.normal(mu, mean_fraction_std * mu, size=m) if mean_fraction_std > 0 else np.full(m, mu)
    raw = np.maximum(raw, 1.0)
    scaled = raw * (n / raw.sum())
    sizes = np.maximum(np.floor(scaled).astype(int), 1)
    diff = n - int(sizes.sum())
    if diff > 0:
        # hand leftovers to the largest fractional remainders, ties by id
        order = np.lexsort((np.arange(m), -(scaled - np.floor(scaled))))
        for i in range(diff):
            sizes[order[i % m]] += 1
    while diff < 0:
        j = int(np.argmax(sizes))
        take = min(-diff, sizes[j] - 1)
        sizes[j] -= take
        diff += take
    return sizes


def partition_dataset(dataset: Dataset, m: int, mean_fraction_std: float = 0.3, rng_seed: int = 0):
    check_positive(m, "m", integer=True)
    check_positive(mean_fraction_std, "mean_fraction_std", allow_zero=True)
    n = dataset.n
    if m > n:
        raise ValueError(f"cannot split {n} samples over {m} clients")
    rng = _random.stream(rng_seed, _random.PARTITION)
    sizes = partition_sizes(n, m, mean_fraction_std, rng)
    perm = rng.permutation(n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [Partition(k, np.sort(perm[bounds[k]:bounds[k + 1]])) for k in range(m)]


# -- models -----------------------------------------------------------------

def design_matrix(X, spec: LearnerSpec):
    X = np.asarray(X, dtype=float)
    if spec.fit_intercept:
        return np.hstack([X, np.ones((X.shape[0], 1))])
    return X


def model_dim(spec: LearnerSpec, d: int, num_classes: int | None = None) -> int:
    width = d + int(spec.fit_intercept)
    if spec.model_kind is ModelKind.SOFTMAX_CLASSIFIER:
        if not num_classes or num_classes < 2:
            raise ValueError("softmax classifier needs num_classes >= 2")
        return width * num_classes
    return width


def init_model(spec: LearnerSpec, d: int, num_classes: int | None = None) -> ModelParams:
    return ModelParams(np.zeros(model_dim(spec, d, num_classes)), version=0)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def scores(weights, A, spec: LearnerSpec, num_classes=None):
    """Raw model output on a design matrix ``A``."""
    if spec.model_kind is ModelKind.SOFTMAX_CLASSIFIER:
        return A @ weights.reshape(A.shape[1], num_classes)
    return A @ weights


def loss_and_grad(weights, A, y, spec: LearnerSpec, num_classes=None):
    """Mean per-sample training loss and its gradient w.r.t. ``weights``."""
    b = A.shape[0]
    kind = spec.model_kind
    if kind is ModelKind.LINEAR_REGRESSION:
        r = A @ weights - y
        return 0.5 * float(r @ r) / b, A.T @ r / b
    if kind is ModelKind.SOFTMAX_CLASSIFIER:
        W = weights.reshape(A.shape[1], num_classes)
        z = A @ W
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        yi = y.astype(int)
        loss = -float(logp[np.arange(b), yi].sum()) / b
        P = np.exp(logp)
        P[np.arange(b), yi] -= 1.0
        return loss, (A.T @ P / b).ravel()
    margin = y * (A @ weights)
    active = margin < 1.0
    loss = float(np.maximum(0.0, 1.0 - margin).sum()) / b + 0.5 * spec.reg * float(weights @ weights)
    grad = -(A[active].T @ y[active]) / b + spec.reg * weights
    return loss, grad


def local_sgd(weights, A, y, spec: LearnerSpec, rng, *, num_classes=None,
              max_steps=None, client=None, round=None):
    """E epochs of mini-batch gradient descent; returns (weights, steps_taken).

    ``max_steps`` truncates the pass, which is how an interrupted (crashed)
    client's partial progress is produced.
    """
    w = np.array(weights, dtype=float, copy=True)
    n = A.shape[0]
    B = spec.batch_size
    eta = spec.learning_rate
    steps = 0
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, B):
            if max_steps is not None and steps >= max_steps:
                return w, steps
            idx = order[start:start + B]
            with np.errstate(over="ignore", invalid="ignore"):
                _, g = loss_and_grad(w, A[idx], y[idx], spec, num_classes)
            if not np.all(np.isfinite(g)):
                raise NumericDivergenceError(
                    f"non-finite gradient on client {client} in round {round}",
                    client=client, round=round,
                )
            with np.errstate(over="ignore", invalid="ignore"):
                w -= eta * g
            steps += 1
    check_finite(w, client=client, round=round)
    return w, steps


def client_update(k, model: ModelParams, dataset: Dataset, partition: Partition,
                  spec: LearnerSpec, rng_seed=0, *, round=None, max_steps=None) -> ModelParams:
    """Train ``model`` on client ``k``'s partition; the version stamp is kept.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``; passing the
    same generator to successive calls chains the batch orders.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else _random.stream(
        rng_seed, _random.BATCH, k, 0 if round is None else round
    )
    A = design_matrix(dataset.features[partition.sample_indices], spec)
    y = dataset.labels[partition.sample_indices]
    expected = model_dim(spec, dataset.d, dataset.num_classes)
    if model.weights.shape != (expected,):
        raise ValueError(f"model has {model.weights.shape[0]} weights, expected {expected}")
    w, _ = local_sgd(model.weights, A, y, spec, rng, num_classes=dataset.num_classes,
                     max_steps=max_steps, client=k, round=round)
    return ModelParams(w, model.version)


def batches_per_epoch(n_k: int, batch_size: int) -> int:
    return math.ceil(n_k / batch_size)


# -- evaluation -------------------------------------------------------------

def regression_accuracy(y, y_hat):
    """1 - mean relative error; meaningful for positive targets only (NaN when max(y, y_hat) is 0)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(1.0 - np.mean(np.abs(y - y_hat) / np.maximum(y, y_hat)))


def exact_match_accuracy(y, y_hat):
    return float(np.mean(np.asarray(y) == np.asarray(y_hat)))


def margin_accuracy(y, y_hat):
    # np.sign(0) == 0, so a zero score counts as a miss
    return float(np.mean(np.maximum(0.0, np.sign(np.asarray(y) * np.asarray(y_hat)))))


def predict(model: ModelParams, X, spec: LearnerSpec, num_classes=None):
    out = scores(model.weights, design_matrix(X, spec), spec, num_classes)
    if spec.model_kind is ModelKind.SOFTMAX_CLASSIFIER:
        return out.argmax(axis=1)
    return out


def evaluate(model: ModelParams, dataset: Dataset, spec: LearnerSpec):
    """Return (mean loss, accuracy) of ``model`` on ``dataset``."""
    if dataset.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    A = design_matrix(dataset.features, spec)
    loss, _ = loss_and_grad(model.weights, A, dataset.labels, spec, dataset.num_classes)
    out = scores(model.weights, A, spec, dataset.num_classes)
    kind = dataset.task_kind
    if kind is TaskKind.REGRESSION:
        acc = regression_accuracy(dataset.labels, out)
    elif kind is TaskKind.CLASSIFICATION:
        acc = exact_match_accuracy(dataset.labels, out.argmax(axis=1))
    else:
        acc = margin_accuracy(dataset.labels, out)
    return loss, acc


# -- data sources -----------------------------------------------------------

def minmax_scale(X):
    X = np.asarray(X, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span


def shift_positive(y, floor=1.0):
    """Shift regression targets so the smallest equals ``floor`` (> 0)."""
    y = np.asarray(y, dtype=float)
    return y - y.min() + floor


def make_regression(n=506, d=13, seed=0, noise=0.3):
    rng = _random.stream(seed, _random.DATA, 0)
    X = minmax_scale(rng.normal(size=(n, d)))
    w = rng.normal(size=d)
    y = X @ w + noise * rng.normal(size=n)
    return Dataset(X, shift_positive(y), TaskKind.REGRESSION)


def make_classification(n=2000, d=20, num_classes=10, seed=0, spread=1.0):
    rng = _random.stream(seed, _random.DATA, 1)
    centers = rng.normal(scale=2.0, size=(num_classes, d))
    y = rng.integers(0, num_classes, size=n)
    X = centers[y] + spread * rng.normal(size=(n, d))
    return Dataset(minmax_scale(X), y, TaskKind.CLASSIFICATION, num_classes)


def make_binary_margin(n=5000, d=35, seed=0, separation=1.5):
    rng = _random.stream(seed, _random.DATA, 2)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    X = rng.normal(size=(n, d)) + separation * y[:, None] * direction
    return Dataset(minmax_scale(X), y, TaskKind.BINARY_MARGIN)


def load_csv(path, task_kind, label_column="label"):
    """Read a numeric CSV with a header row and a ``label`` column.

    Features are min-max scaled to [0, 1]; regression targets are shifted
    so every label is positive, which keeps the relative-error accuracy
    well defined.
    """
    task_kind = TaskKind(task_kind)
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        rows = [r for r in reader if r]
    li = header.index(label_column)
    data = np.array(rows, dtype=float)
    y = data[:, li]
    X = np.delete(data, li, axis=1)
    if task_kind is TaskKind.REGRESSION:
        y = shift_positive(y)
    return Dataset(minmax_scale(X), y, task_kind)
