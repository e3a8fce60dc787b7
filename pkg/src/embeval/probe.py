"""Deterministic splits, preprocessing, and per-fold probe training.

Every random choice is drawn from a PCG64 generator seeded through
``numpy.random.SeedSequence`` so that reruns — and reimplementations that pin
the same generator — reproduce results bit for bit:

  * fold splits: ``SeedSequence([seed, fold_index])`` shuffles the sorted id
    list with ``Generator.permutation`` (Fisher-Yates);
  * batch order: ``SeedSequence([fold_seed])``, one batch-order permutation
    per epoch;
  * MLP init:    ``SeedSequence([fold_seed, layer_index])`` (hidden layers
    only; output layers start at zero, like the linear probe).

Training partitions the samples into contiguous mini-batches in the row
order the caller supplies and revisits those batches in a freshly permuted
order every epoch. Fold splits hand the training rows over in shuffled
order, so batch composition is random per fold while epochs stream the
matrix in place instead of re-gathering it.

The optimizer is plain mini-batch gradient descent, zero momentum, zero
weight decay, with mean squared error for regression and softmax
cross-entropy over two logits for classification.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import MissingId, NonFiniteLoss, TooFewSamples, WidthMismatch
from .ingest import (
    CLASSIFICATION,
    PROBE_LINEAR,
    PROBE_MLP1,
    PROBE_MLP2,
    REGRESSION,
    EmbeddingSet,
    EvalConfig,
    TaskDataset,
)
from .metrics import FoldScore


@dataclass(frozen=True)
class SplitPlan:
    """k deterministic train/test partitions of one id set."""

    k: int
    ratio: float
    seed: int
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]


def make_splits(ids, k: int, ratio: float, seed: int) -> SplitPlan:
    """Generate k independent shuffle-splits of ``ids``.

    The id list is canonicalized by sorting, so the plan depends only on the
    id *set*. Fold ``j`` shuffles with PCG64(SeedSequence([seed, j])) and cuts
    at round(ratio * n).
    """
    order = sorted(ids)
    n = len(order)
    if n != len(set(order)):
        raise TooFewSamples("ids must be unique")
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train < 1 or n - n_train < 1:
        raise TooFewSamples(
            f"ratio {ratio} leaves {n_train} train / {n - n_train} test samples"
        )

    folds = []
    for fold_index in range(k):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, fold_index]))
        )
        perm = rng.permutation(n)
        shuffled = [order[i] for i in perm]
        folds.append((tuple(shuffled[:n_train]), tuple(shuffled[n_train:])))
    return SplitPlan(k=k, ratio=ratio, seed=seed, folds=tuple(folds))


def standardize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Center and scale each dimension by its global mean and population std.

    Zero-variance dimensions are passed through mean-centered only.
    """
    values = embeddings.values
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population (1/n) convention
    scale = np.where(std == 0.0, 1.0, std)
    return EmbeddingSet(
        dim=embeddings.dim, ids=embeddings.ids, values=(values - mean) / scale
    )


def normalize_labels(task: TaskDataset) -> TaskDataset:
    """Min-max scale regression labels to [0, 1] over the full task.

    Classification labels pass through; constant-label tasks map to zeros.
    """
    if task.kind == CLASSIFICATION:
        return task
    labels = task.labels
    lo = float(labels.min())
    hi = float(labels.max())
    if hi == lo:
        scaled = np.zeros_like(labels)
    else:
        scaled = (labels - lo) / (hi - lo)
    return TaskDataset(name=task.name, kind=task.kind, ids=task.ids, labels=scaled)


def fold_training_seed(seed: int, task_name: str, fold_index: int) -> int:
    """64-bit training seed for one (run seed, task, fold) triple."""
    message = f"{seed}\x1f{task_name}\x1f{fold_index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(message).digest()[:8], "big")


@dataclass(frozen=True)
class ProbeModel:
    """Trained probe head: a stack of (weights, bias) layers.

    Linear probes hold a single layer of shape (N, 1) for regression or
    (N, 2) softmax logits for classification; MLP variants insert one or two
    ReLU hidden layers of configurable width.
    """

    kind: str
    task_kind: str
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    loss_curve: tuple[float, ...] = ()

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


def _layer_dims(kind: str, n_features: int, n_outputs: int, hidden: int) -> list[tuple[int, int]]:
    if kind == PROBE_LINEAR:
        return [(n_features, n_outputs)]
    if kind == PROBE_MLP1:
        return [(n_features, hidden), (hidden, n_outputs)]
    if kind == PROBE_MLP2:
        return [(n_features, hidden), (hidden, hidden), (hidden, n_outputs)]
    raise WidthMismatch(f"unknown probe kind '{kind}'")


def _init_layers(kind: str, dims: list[tuple[int, int]], fold_seed: int):
    layers = []
    for index, (fan_in, fan_out) in enumerate(dims):
        bias = np.zeros(fan_out)
        if index == len(dims) - 1:
            # Output layer starts at zero so an untrained probe predicts the
            # neutral value (0 for regression, probability 0.5 for both classes).
            weights = np.zeros((fan_in, fan_out))
        else:
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([fold_seed, index]))
            )
            bound = math.sqrt(6.0 / fan_in)
            weights = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append([weights, bias])
    return layers


def _forward(layers, features: np.ndarray):
    """Return pre-activations and post-activations of every layer."""
    pre = []
    post = [features]
    h = features
    for index, (weights, bias) in enumerate(layers):
        z = h @ weights + bias
        pre.append(z)
        if index < len(layers) - 1:
            h = np.maximum(z, 0.0)
            post.append(h)
    return pre, post


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    kind: str,
    config: EvalConfig,
    fold_seed: int,
) -> ProbeModel:
    """Train one probe with mini-batch gradient descent.

    Runs exactly ``config.epochs`` epochs at ``config.learning_rate`` with
    ``config.batch_size``. Samples are batched contiguously in the given row
    order (fold splits supply rows pre-shuffled) and the batch visit order is
    re-drawn each epoch as a pure function of ``fold_seed``. Raises
    NonFiniteLoss if training diverges.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = features.shape[0]
    if n == 0 or labels.shape != (n,):
        raise WidthMismatch("features and labels must agree on a nonzero sample count")
    if features.shape[1] != config.embedding_dim:
        raise WidthMismatch(
            f"feature width {features.shape[1]} != embedding_dim {config.embedding_dim}"
        )

    n_outputs = 2 if kind == CLASSIFICATION else 1
    dims = _layer_dims(config.probe_kind, features.shape[1], n_outputs, config.mlp_hidden)
    layers = _init_layers(config.probe_kind, dims, fold_seed)

    if kind == CLASSIFICATION:
        onehot = np.zeros((n, 2))
        onehot[np.arange(n), labels.astype(np.int64)] = 1.0

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([fold_seed])))
    lr = config.learning_rate
    batch = config.batch_size
    bounds = [(s, min(s + batch, n)) for s in range(0, n, batch)]
    loss_curve = []

    for _ in range(config.epochs):
        batch_order = rng.permutation(len(bounds))

        loss_sum = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            # divergence shows up as a non-finite epoch loss, checked below
            for batch_index in batch_order:
                start, stop = bounds[batch_index]
                x_b = features[start:stop]
                b = stop - start

                pre, post = _forward(layers, x_b)
                if kind == CLASSIFICATION:
                    probs = _softmax(pre[-1])
                    t_b = onehot[start:stop]
                    # clip only inside the log; gradients use the raw softmax
                    loss_sum += float(-np.sum(t_b * np.log(np.maximum(probs, 1e-300))))
                    grad = (probs - t_b) / b
                else:
                    residual = pre[-1][:, 0] - labels[start:stop]
                    loss_sum += float(residual @ residual)
                    grad = (2.0 / b) * residual[:, None]

                for index in range(len(layers) - 1, -1, -1):
                    weights, bias = layers[index]
                    grad_w = post[index].T @ grad
                    grad_b = grad.sum(axis=0)
                    if index > 0:
                        grad = (grad @ weights.T) * (pre[index - 1] > 0.0)
                    layers[index][0] = weights - lr * grad_w
                    layers[index][1] = bias - lr * grad_b

        epoch_loss = loss_sum / n
        if not math.isfinite(epoch_loss):
            raise NonFiniteLoss(f"training diverged (epoch loss {epoch_loss})")
        loss_curve.append(epoch_loss)

    for weights, bias in layers:
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise NonFiniteLoss("training produced non-finite parameters")

    return ProbeModel(
        kind=config.probe_kind,
        task_kind=kind,
        layers=tuple((w, b) for w, b in layers),
        loss_curve=tuple(loss_curve),
    )


def predict(model: ProbeModel, features: np.ndarray) -> np.ndarray:
    """Probe output: affine/MLP value for regression, P(class 1) for classification."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise WidthMismatch(
            f"feature width {features.shape[1:]} does not match model input "
            f"width {model.input_dim}"
        )
    pre, _ = _forward(model.layers, features)
    if model.task_kind == CLASSIFICATION:
        return _softmax(pre[-1])[:, 1]
    return pre[-1][:, 0]


def evaluate_fold(
    embeddings: EmbeddingSet,
    task: TaskDataset,
    fold: tuple[tuple[str, ...], tuple[str, ...]],
    config: EvalConfig,
    fold_seed: int,
    fold_index: int = 0,
    capture_predictions: bool = False,
) -> FoldScore:
    """Train on the fold's train ids and score the test ids.

    Expects embeddings/labels already preprocessed (standardization and label
    normalization are global operations applied upstream). The primary score
    is R^2 for regression, F1 for classification; the rest of the metric
    suite lands in ``secondary``.
    """
    train_ids, test_ids = fold
    for sample_id in (*train_ids, *test_ids):
        if not embeddings.has(sample_id):
            raise MissingId(f"id '{sample_id}' missing from submission")
        if not task.has(sample_id):
            raise MissingId(f"id '{sample_id}' missing from task '{task.name}'")

    x_train = embeddings.matrix(train_ids)
    y_train = task.vector(train_ids)
    x_test = embeddings.matrix(test_ids)
    y_test = task.vector(test_ids)

    model = train_probe(x_train, y_train, task.kind, config, fold_seed)
    output = predict(model, x_test)

    warnings: list[str] = []
    if task.kind == REGRESSION:
        primary = metrics.r_squared(y_test, output)
        if primary == metrics.CONSTANT_TRUTH_SENTINEL:
            warnings.append(metrics.CONSTANT_TRUTH_WARNING)
        secondary = {
            "r2": float(primary),
            "mse": metrics.mse(y_test, output),
            "mae": metrics.mae(y_test, output),
        }
    else:
        cm = metrics.confusion(y_test, output)
        primary = metrics.f1(cm)
        secondary = {
            "f1": float(primary),
            "precision": metrics.precision(cm),
            "recall": metrics.recall(cm),
            "accuracy": metrics.accuracy(cm),
            "tp": float(cm.tp),
            "fp": float(cm.fp),
            "tn": float(cm.tn),
            "fn": float(cm.fn),
        }
        try:
            secondary["roc_auc"] = metrics.roc_auc(y_test, output)
        except metrics.SingleClass:
            warnings.append(metrics.SINGLE_CLASS_WARNING)

    predictions = None
    if capture_predictions:
        predictions = tuple(
            (sample_id, float(y), float(p))
            for sample_id, y, p in zip(test_ids, y_test, output)
        )

    return FoldScore(
        task=task.name,
        fold_index=fold_index,
        primary=float(primary),
        secondary=secondary,
        loss_curve=model.loss_curve,
        warnings=tuple(warnings),
        predictions=predictions,
    )
