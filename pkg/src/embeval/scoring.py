"""Quality scores, task-competitiveness weights, and rank aggregation.

A task's quality score regulates the mean fold score by its spread:

    q = 100 * epsilon * mean(s) / (std(s) + epsilon)

with population (1/n) standard deviations throughout and epsilon defaulting
to 0.02. For fold scores in [0, 1] this yields q in [0, 100]; a negative q
flags an unreliable method.

Experiments are compared rank-then-aggregate: per task, ranks descend on q
with ties sharing the better rank; the final score is the task-weighted mean
rank, where a task's weight is the (normalized) standard deviation of its q
values across experiments, so tasks on which experiments differentiate count
more. An optional ghost task with spread epsilon and rank 0 for everyone
stabilizes the weights when all real task spreads vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import (
    EmptyFolds,
    InvalidValue,
    MismatchedTasks,
    MissingTaskRank,
    NonFiniteValue,
)

DEFAULT_EPSILON = 0.02

UNIFORM_WEIGHTS_WARNING = "uniform_task_weights_all_zero_variance"


@dataclass(frozen=True)
class TaskQuality:
    """Fold-score statistics and quality score of one task for one experiment."""

    task: str
    mean_s: float
    std_s: float
    q: float
    k_used: int
    unreliable: bool


def quality_score(fold_primaries, epsilon: float, task: str = "") -> TaskQuality:
    """Quality score over one task's fold scores; population std convention."""
    if not epsilon > 0:
        raise InvalidValue(f"epsilon must be positive, got {epsilon!r}")
    scores = np.asarray(fold_primaries, dtype=np.float64)
    if scores.size == 0:
        raise EmptyFolds("need at least one fold score")
    mean_s = float(scores.mean())
    std_s = float(scores.std())
    q = 100.0 * epsilon * mean_s / (std_s + epsilon)
    return TaskQuality(
        task=task,
        mean_s=mean_s,
        std_s=std_s,
        q=q,
        k_used=int(scores.size),
        unreliable=q < 0.0,
    )


def mean_q(task_qualities) -> float:
    """Unweighted arithmetic mean of q over tasks."""
    qualities = list(task_qualities)
    if not qualities:
        raise EmptyFolds("need at least one task quality")
    return sum(tq.q for tq in qualities) / len(qualities)


def rank_values(values: Mapping[str, float], descending: bool = True) -> dict[str, int]:
    """Competition ranks: 1 + number of strictly better entries; ties share
    the better rank. 'Better' is greater when descending, smaller otherwise.
    """
    if not values:
        raise EmptyFolds("cannot rank an empty map")
    for key, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteValue(f"non-finite value for '{key}': {value!r}")
    sign = -1.0 if descending else 1.0
    return {
        key: 1 + sum(1 for other in values.values() if sign * other < sign * value)
        for key, value in values.items()
    }


@dataclass(frozen=True)
class TaskWeights:
    """Per-task competitiveness weights (normalized q spreads across experiments)."""

    weights: dict[str, float]
    stds: dict[str, float]
    ghost_weight: float | None = None
    uniform_fallback: bool = False

    def total(self) -> float:
        return sum(self.weights.values()) + (self.ghost_weight or 0.0)


def task_weights(
    q_matrix: Mapping[str, Mapping[str, float]],
    ghost: bool = False,
    epsilon: float = DEFAULT_EPSILON,
) -> TaskWeights:
    """Weights from the spread of q across experiments, per task.

    With ``ghost`` enabled an extra pseudo-task of spread epsilon enters the
    normalization (and contributes rank 0 downstream). Without it, an
    all-zero-variance matrix falls back to uniform weights with a warning
    flag instead of dividing by zero.
    """
    if not epsilon > 0:
        raise InvalidValue(f"epsilon must be positive, got {epsilon!r}")
    if not q_matrix:
        raise MismatchedTasks("need at least one task")
    tasks = sorted(q_matrix)
    experiments = sorted(q_matrix[tasks[0]])
    if not experiments:
        raise MismatchedTasks("need at least one experiment")
    for task in tasks:
        if sorted(q_matrix[task]) != experiments:
            raise MismatchedTasks(
                f"task '{task}' does not cover the same experiments as '{tasks[0]}'"
            )

    stds = {
        task: float(np.std([q_matrix[task][p] for p in experiments]))
        for task in tasks
    }
    spread_total = sum(stds[task] for task in tasks)

    if ghost:
        denominator = spread_total + epsilon
        weights = {task: stds[task] / denominator for task in tasks}
        return TaskWeights(weights=weights, stds=stds, ghost_weight=epsilon / denominator)

    if spread_total == 0.0:
        uniform = 1.0 / len(tasks)
        return TaskWeights(
            weights={task: uniform for task in tasks},
            stds=stds,
            uniform_fallback=True,
        )
    return TaskWeights(
        weights={task: stds[task] / spread_total for task in tasks}, stds=stds
    )


def weighted_rank_score(per_task_ranks: Mapping[str, int], weights: TaskWeights) -> float:
    """Weighted mean rank; the ghost task, when present, contributes rank 0."""
    score = 0.0
    for task, weight in weights.weights.items():
        if task not in per_task_ranks:
            raise MissingTaskRank(f"no rank for weighted task '{task}'")
        score += weight * per_task_ranks[task]
    return score


@dataclass(frozen=True)
class RankingResult:
    """Full rank-then-aggregate outcome over one set of experiments."""

    task_ranks: dict[str, dict[str, int]]
    weights: TaskWeights
    scores: dict[str, float]
    mean_q: dict[str, float]
    ranks: dict[str, int]
    order: tuple[str, ...]


def final_ranking(
    experiments: Mapping[str, Mapping[str, float]],
    ghost: bool = False,
    epsilon: float = DEFAULT_EPSILON,
    weighted: bool = True,
) -> RankingResult:
    """Rank experiments given their per-task q values.

    Per-task ranks descend on q; weights come from ``task_weights``; the final
    rank ascends on the weighted mean rank. With ``weighted`` disabled the
    final rank descends on mean q instead (the single-team mode), while the
    weighted scores are still reported.
    """
    if not experiments:
        raise MismatchedTasks("need at least one experiment")
    names = sorted(experiments)
    tasks = sorted(experiments[names[0]])
    if not tasks:
        raise MismatchedTasks("experiments carry no tasks")
    for name in names:
        if sorted(experiments[name]) != tasks:
            raise MismatchedTasks(
                f"experiment '{name}' does not cover the same tasks as '{names[0]}'"
            )

    q_matrix = {task: {name: float(experiments[name][task]) for name in names} for task in tasks}
    task_ranks = {task: rank_values(q_matrix[task], descending=True) for task in tasks}
    weights = task_weights(q_matrix, ghost=ghost, epsilon=epsilon)
    scores = {
        name: weighted_rank_score({task: task_ranks[task][name] for task in tasks}, weights)
        for name in names
    }
    means = {
        name: sum(experiments[name][task] for task in tasks) / len(tasks)
        for name in names
    }
    if weighted:
        ranks = rank_values(scores, descending=False)
    else:
        ranks = rank_values(means, descending=True)
    order = tuple(sorted(names, key=lambda n: (ranks[n], -means[n], n)))
    return RankingResult(
        task_ranks=task_ranks,
        weights=weights,
        scores=scores,
        mean_q=means,
        ranks=ranks,
        order=order,
    )
