"""Pure metric computations for regression and binary classification.

Serialized metric names are fixed: ``r2, mse, mae, f1, precision, recall,
accuracy, roc_auc``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, SingleClass

# Stand-in for R^2 = -inf when the test labels are constant and missed:
# hugely negative ("worse than predicting the mean") but finite, so fold
# statistics stay well-defined.
CONSTANT_TRUTH_SENTINEL = -1e9

CONSTANT_TRUTH_WARNING = "constant_truth_r2_sentinel"
SINGLE_CLASS_WARNING = "roc_auc_omitted_single_class"


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise LengthMismatch(f"expected equal-length 1-d vectors, got {a.shape} and {b.shape}")
    return a, b


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot about mean(y_true).

    Constant truth (SS_tot = 0) yields 1.0 on an exact match and the
    CONSTANT_TRUTH_SENTINEL otherwise.
    """
    y, yhat = _pair(y_true, y_pred)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if np.array_equal(y, yhat) else CONSTANT_TRUTH_SENTINEL
    ss_res = float(np.sum((y - yhat) ** 2))
    return 1.0 - ss_res / ss_tot


def mse(y_true, y_pred) -> float:
    y, yhat = _pair(y_true, y_pred)
    return float(np.mean((y - yhat) ** 2))


def mae(y_true, y_pred) -> float:
    y, yhat = _pair(y_true, y_pred)
    return float(np.mean(np.abs(y - yhat)))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(y_true, prob, threshold: float = 0.5) -> ConfusionMatrix:
    """Binary confusion counts; predicted class is 1 iff prob >= threshold."""
    y, p = _pair(y_true, prob)
    pred = p >= threshold
    actual = y == 1.0
    return ConfusionMatrix(
        tp=int(np.sum(actual & pred)),
        fp=int(np.sum(~actual & pred)),
        tn=int(np.sum(~actual & ~pred)),
        fn=int(np.sum(actual & ~pred)),
    )


def precision(cm: ConfusionMatrix) -> float:
    return cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0


def recall(cm: ConfusionMatrix) -> float:
    return cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm.tp + cm.tn) / cm.total if cm.total else 0.0


def f1(cm: ConfusionMatrix) -> float:
    """Harmonic mean of precision and recall; 0 when either is undefined.

    Computed as 2*tp / (2*tp + fp + fn), which equals
    2*precision*recall / (precision + recall) whenever that form is defined.
    """
    if cm.tp + cm.fp == 0 or cm.tp + cm.fn == 0:
        return 0.0
    if precision(cm) + recall(cm) == 0.0:
        return 0.0
    return 2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn)


def roc_auc(y_true, score) -> float:
    """Probability that a random positive outranks a random negative.

    Mann-Whitney formulation with tied scores counted as half; requires both
    classes to be present.
    """
    y, s = _pair(y_true, score)
    pos = y == 1.0
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("roc_auc needs both classes present")

    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(y.size, dtype=np.float64)
    i = 0
    while i < y.size:
        j = i
        while j + 1 < y.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1

    u_stat = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


@dataclass(frozen=True)
class FoldScore:
    """Score of one train/test split of one task.

    ``primary`` is R^2 for regression and F1 for classification; ``secondary``
    holds the remaining metrics, ``loss_curve`` the per-epoch training loss.
    """

    task: str
    fold_index: int
    primary: float
    secondary: dict[str, float] = field(default_factory=dict)
    loss_curve: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()
    predictions: tuple[tuple[str, float, float], ...] | None = None
