"""Synthetic fixtures with known structure, plus a closed-form OLS oracle.

Everything here is a pure function of its seed (PCG64 behind
``numpy.random.SeedSequence``), so quantitative tests run at desk scale with
frozen expected values. Sample ids follow the scheme ``s000000, s000001, ...``
so embeddings and task labels generated for the same ``n`` always join.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .ingest import CLASSIFICATION, REGRESSION, TASK_KINDS, EmbeddingSet, TaskDataset
from .metrics import r_squared

_LABEL_STREAM = 0x17AB


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic embedding/task pair."""

    n_samples: int
    dim: int
    signal_dims: int
    noise_sigma: float = 0.0
    kind: str = REGRESSION
    zero_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.dim < 1:
            raise InvalidSpec("n_samples and dim must be positive")
        if not 0 <= self.signal_dims <= self.dim:
            raise InvalidSpec(
                f"signal_dims must lie in [0, dim], got {self.signal_dims}"
            )
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        if self.kind not in TASK_KINDS:
            raise InvalidSpec(f"unknown task kind '{self.kind}'")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise InvalidSpec("zero_fraction must lie in [0, 1]")


def sample_ids(n: int) -> tuple[str, ...]:
    return tuple(f"s{i:06d}" for i in range(n))


def _generator(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def gen_random_embeddings(n: int, dim: int, seed: int) -> EmbeddingSet:
    """n rows of i.i.d. standard normal entries, deterministic from seed."""
    if n < 1 or dim < 1:
        raise InvalidSpec("n and dim must be positive")
    rng = _generator(seed)
    return EmbeddingSet(dim=dim, ids=sample_ids(n), values=rng.standard_normal((n, dim)))


def linear_labels(
    embeddings: EmbeddingSet,
    signal_dims: int,
    noise_sigma: float,
    seed: int,
    name: str = "synth_linear",
) -> TaskDataset:
    """Regression labels that are linear in the first ``signal_dims`` coordinates.

    A fixed unit-norm coefficient vector (drawn from the seed) weights the
    signal coordinates; Gaussian noise of scale ``noise_sigma`` is added and
    the result is min-max shifted into [0, 1].
    """
    if not 0 <= signal_dims <= embeddings.dim:
        raise InvalidSpec(f"signal_dims must lie in [0, {embeddings.dim}]")
    if noise_sigma < 0:
        raise InvalidSpec("noise_sigma must be non-negative")
    rng = _generator(seed, _LABEL_STREAM)
    n = len(embeddings)
    raw = np.zeros(n)
    if signal_dims > 0:
        coef = rng.standard_normal(signal_dims)
        coef /= np.linalg.norm(coef)
        raw = embeddings.values[:, :signal_dims] @ coef
    if noise_sigma > 0:
        raw = raw + noise_sigma * rng.standard_normal(n)
    lo, hi = float(raw.min()), float(raw.max())
    labels = np.zeros(n) if hi == lo else (raw - lo) / (hi - lo)
    return TaskDataset(name=name, kind=REGRESSION, ids=embeddings.ids, labels=labels)


def gen_linear_task(spec: SynthSpec, name: str = "synth_linear"):
    """Standard-normal embeddings plus labels linear in their leading coordinates."""
    if spec.kind != REGRESSION:
        raise InvalidSpec("gen_linear_task generates regression tasks only")
    embeddings = gen_random_embeddings(spec.n_samples, spec.dim, spec.seed)
    task = linear_labels(embeddings, spec.signal_dims, spec.noise_sigma, spec.seed, name)
    return embeddings, task


def gen_majority_zero_task(
    n: int,
    zero_fraction: float,
    kind: str,
    seed: int,
    name: str = "synth_random",
) -> TaskDataset:
    """Task with round(zero_fraction * n) zero labels and shuffled remainder.

    Non-zero labels are uniform in (0, 1] for regression and exactly 1 for
    classification; the zero/non-zero assignment is shuffled by the seed.
    """
    if n < 1:
        raise InvalidSpec("n must be positive")
    if not 0.0 <= zero_fraction <= 1.0:
        raise InvalidSpec("zero_fraction must lie in [0, 1]")
    if kind not in TASK_KINDS:
        raise InvalidSpec(f"unknown task kind '{kind}'")
    rng = _generator(seed, _LABEL_STREAM + 1)
    n_zero = int(math.floor(zero_fraction * n + 0.5))
    n_live = n - n_zero
    if kind == CLASSIFICATION:
        live = np.ones(n_live)
    else:
        live = 1.0 - rng.random(n_live)  # uniform on (0, 1]
    labels = np.concatenate([np.zeros(n_zero), live])
    labels = labels[rng.permutation(n)]
    return TaskDataset(name=name, kind=kind, ids=sample_ids(n), labels=labels)


def ols_oracle(features, labels):
    """Exact least-squares fit with intercept; the reference for probe checks.

    Solves the normal equations directly, falling back to the pseudo-inverse
    (minimum-norm solution) on singular systems. Returns the coefficient
    vector ``[intercept, a_1, ..., a_N]`` and the training R^2.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    gram = design.T @ design
    moment = design.T @ y
    try:
        coef = np.linalg.solve(gram, moment)
        if not np.isfinite(coef).all():
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        coef = np.linalg.pinv(design) @ y
    return coef, r_squared(y, design @ coef)


def ols_predict(coef: np.ndarray, features) -> np.ndarray:
    """Apply an ``ols_oracle`` coefficient vector to new features."""
    x = np.asarray(features, dtype=np.float64)
    return coef[0] + x @ coef[1:]
