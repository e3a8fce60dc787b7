"""Parsing and validation of submissions, task annotations, and run configuration.

Wire formats:
  * submission CSV: header ``id,<c1>,...,<cN>`` (column names after ``id`` are
    ignored), one row per sample, decimal floats.
  * annotation CSV: header ``id,label``; the filename encodes the task —
    ``<task>__regr.csv`` for regression, ``<task>__cls.csv`` for binary
    classification.
  * config: flat YAML key/value document; unknown keys are rejected so typos
    cannot silently change an evaluation.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyAnnotationDir,
    FilterNameNotFound,
    InvalidValue,
    MalformedCsv,
    NonBinaryLabel,
    NonFiniteValue,
    UnknownKey,
    UnknownTaskSuffix,
)

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASK_KINDS = (REGRESSION, CLASSIFICATION)

PROBE_LINEAR = "linear"
PROBE_MLP1 = "mlp1"
PROBE_MLP2 = "mlp2"
PROBE_KINDS = (PROBE_LINEAR, PROBE_MLP1, PROBE_MLP2)

_REGR_SUFFIX = "__regr"
_CLS_SUFFIX = "__cls"


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Id-keyed table of fixed-dimension real vectors (one submission).

    ``values[i]`` is the embedding of ``ids[i]``; row order is preserved from
    the source file. All entries are finite and ids are unique.
    """

    dim: int
    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidValue(f"embedding dim must be positive, got {self.dim}")
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.ids), self.dim):
            raise DimensionMismatch(
                f"value matrix shape {values.shape} does not match "
                f"{len(self.ids)} ids x dim {self.dim}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("embedding ids are not unique")
        if values.size and not np.isfinite(values).all():
            bad = int(np.argmin(np.isfinite(values).all(axis=1)))
            raise NonFiniteValue(f"non-finite embedding for id '{self.ids[bad]}'")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, sample_id: str) -> np.ndarray:
        return self.values[self._index[sample_id]]

    def has(self, sample_id: str) -> bool:
        return sample_id in self._index

    def matrix(self, sample_ids) -> np.ndarray:
        """Gather rows for the given ids, in the given order."""
        idx = [self._index[s] for s in sample_ids]
        return self.values[idx]


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Labels of one hidden downstream task.

    ``kind`` derives from the annotation filename only; classification labels
    are exactly 0 or 1, regression labels any finite real.
    """

    name: str
    kind: str
    ids: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvalidValue(f"unknown task kind '{self.kind}'")
        labels = np.asarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "labels", labels)
        if labels.shape != (len(self.ids),):
            raise InvalidValue("label vector length does not match ids")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId(f"task '{self.name}' has duplicate ids")
        if labels.size and not np.isfinite(labels).all():
            bad = int(np.argmin(np.isfinite(labels)))
            raise NonFiniteValue(
                f"task '{self.name}': non-finite label for id '{self.ids[bad]}'"
            )
        if self.kind == CLASSIFICATION and labels.size:
            binary = (labels == 0.0) | (labels == 1.0)
            if not binary.all():
                bad = int(np.argmin(binary))
                raise NonBinaryLabel(
                    f"task '{self.name}': label {labels[bad]} for id "
                    f"'{self.ids[bad]}' is not 0 or 1"
                )
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def label(self, sample_id: str) -> float:
        return float(self.labels[self._index[sample_id]])

    def has(self, sample_id: str) -> bool:
        return sample_id in self._index

    def vector(self, sample_ids) -> np.ndarray:
        idx = [self._index[s] for s in sample_ids]
        return self.labels[idx]


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings; defaults reproduce the standard protocol."""

    embedding_dim: int = 1024
    batch_size: int = 64
    epochs: int = 20
    learning_rate: float = 0.001
    k_folds: int = 40
    standardize_embeddings: bool = True
    normalize_labels: bool = True
    task_filter: tuple[str, ...] | None = None
    seed: int = 42
    epsilon: float = 0.02
    split_ratio: float = 0.8
    probe_kind: str = PROBE_LINEAR
    mlp_hidden: int = 256
    ghost_task: bool = False
    weighted_ranking: bool = True

    def __post_init__(self):
        for name in ("embedding_dim", "batch_size", "epochs", "k_folds", "mlp_hidden"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise InvalidValue(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidValue(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("learning_rate", "epsilon"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
                raise InvalidValue(f"{name} must be positive, got {value!r}")
        if not isinstance(self.split_ratio, (int, float)) or not 0.0 < self.split_ratio < 1.0:
            raise InvalidValue(f"split_ratio must lie in (0, 1), got {self.split_ratio!r}")
        if self.probe_kind not in PROBE_KINDS:
            raise InvalidValue(
                f"probe_kind must be one of {PROBE_KINDS}, got {self.probe_kind!r}"
            )
        for name in ("standardize_embeddings", "normalize_labels", "ghost_task", "weighted_ranking"):
            if not isinstance(getattr(self, name), bool):
                raise InvalidValue(f"{name} must be a boolean")
        if self.task_filter is not None:
            if not all(isinstance(t, str) for t in self.task_filter):
                raise InvalidValue("task_filter entries must be strings")
            object.__setattr__(self, "task_filter", tuple(self.task_filter))

    def fingerprint(self) -> str:
        """Stable hash of all settings, recorded with every experiment."""
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def _read_csv_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise MalformedCsv(f"{path}: empty file") from None
            return header, list(reader)
    except OSError as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc
    except csv.Error as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc


def parse_submission(path, expected_dim: int) -> EmbeddingSet:
    """Parse a submission CSV into an EmbeddingSet of width ``expected_dim``.

    The header must start with ``id``; every data row must carry exactly
    ``expected_dim`` numeric cells after the id. Row order is preserved.
    """
    path = Path(path)
    header, rows = _read_csv_rows(path)
    if not header or header[0] != "id":
        raise MalformedCsv(f"{path}: first header column must be 'id'")
    if len(header) != expected_dim + 1:
        raise DimensionMismatch(
            f"{path}: header has {len(header) - 1} value columns, "
            f"expected {expected_dim}"
        )
    if not rows:
        raise MalformedCsv(f"{path}: no data rows")

    ids: list[str] = []
    seen: set[str] = set()
    vectors: list[np.ndarray] = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != expected_dim + 1:
            raise DimensionMismatch(
                f"{path}:{lineno}: row has {len(row) - 1} value columns, "
                f"expected {expected_dim}"
            )
        sample_id = row[0]
        if sample_id in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate id '{sample_id}'")
        seen.add(sample_id)
        try:
            vec = np.asarray(row[1:], dtype=np.float64)
        except ValueError as exc:
            raise MalformedCsv(
                f"{path}:{lineno}: non-numeric cell in row '{sample_id}'"
            ) from exc
        ids.append(sample_id)
        vectors.append(vec)

    matrix = np.vstack(vectors)
    finite_rows = np.isfinite(matrix).all(axis=1)
    if not finite_rows.all():
        bad = int(np.argmin(finite_rows))
        raise NonFiniteValue(f"{path}: non-finite value in row '{ids[bad]}'")
    return EmbeddingSet(dim=expected_dim, ids=tuple(ids), values=matrix)


def task_name_and_kind(filename: str) -> tuple[str, str]:
    """Derive (task name, kind) from an annotation filename; pure in the name."""
    stem = Path(filename).stem
    if stem.endswith(_REGR_SUFFIX):
        name, kind = stem[: -len(_REGR_SUFFIX)], REGRESSION
    elif stem.endswith(_CLS_SUFFIX):
        name, kind = stem[: -len(_CLS_SUFFIX)], CLASSIFICATION
    else:
        raise UnknownTaskSuffix(
            f"'{filename}': task filename must end in '{_REGR_SUFFIX}' or '{_CLS_SUFFIX}'"
        )
    if not name:
        raise MalformedCsv(f"'{filename}': empty task name")
    return name, kind


def parse_task(path) -> TaskDataset:
    """Parse one annotation CSV; the task kind comes from the filename only."""
    path = Path(path)
    name, kind = task_name_and_kind(path.name)
    header, rows = _read_csv_rows(path)
    if header != ["id", "label"]:
        raise MalformedCsv(f"{path}: header must be 'id,label', got {header}")
    if not rows:
        raise MalformedCsv(f"{path}: no data rows")

    ids: list[str] = []
    seen: set[str] = set()
    labels: list[float] = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise MalformedCsv(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        sample_id, raw = row
        if sample_id in seen:
            raise DuplicateId(f"{path}:{lineno}: duplicate id '{sample_id}'")
        seen.add(sample_id)
        try:
            value = float(raw)
        except ValueError as exc:
            raise MalformedCsv(f"{path}:{lineno}: non-numeric label '{raw}'") from exc
        ids.append(sample_id)
        labels.append(value)

    return TaskDataset(name=name, kind=kind, ids=tuple(ids), labels=np.asarray(labels))


def load_annotations(directory, task_filter=None) -> list[TaskDataset]:
    """Parse every top-level ``*.csv`` in ``directory``, sorted by task name.

    With ``task_filter`` set, returns exactly that subset; a filter name with
    no matching task raises FilterNameNotFound.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyAnnotationDir(f"'{directory}' is not a directory")
    files = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix == ".csv")
    if not files:
        raise EmptyAnnotationDir(f"no task CSV files in '{directory}'")

    tasks = [parse_task(p) for p in files]
    by_name: dict[str, TaskDataset] = {}
    for task in tasks:
        if task.name in by_name:
            raise DuplicateId(f"duplicate task name '{task.name}' in '{directory}'")
        by_name[task.name] = task

    if task_filter is not None:
        missing = [n for n in task_filter if n not in by_name]
        if missing:
            raise FilterNameNotFound(
                f"task_filter names not found: {', '.join(sorted(missing))}"
            )
        wanted = set(task_filter)
        return [by_name[n] for n in sorted(by_name) if n in wanted]
    return [by_name[n] for n in sorted(by_name)]


_CONFIG_FIELDS = {f for f in EvalConfig.__dataclass_fields__}


def load_config(path) -> EvalConfig:
    """Load an EvalConfig from a flat YAML file; unknown keys are hard errors."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidValue(f"{path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidValue(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise InvalidValue(f"{path}: config must be a key: value mapping")

    unknown = sorted(set(doc) - _CONFIG_FIELDS)
    if unknown:
        raise UnknownKey(f"{path}: unknown config keys: {', '.join(unknown)}")

    if "task_filter" in doc:
        value = doc["task_filter"]
        if value is False or value is None:
            doc["task_filter"] = None
        elif isinstance(value, list):
            doc["task_filter"] = tuple(str(v) for v in value)
        else:
            raise InvalidValue(
                f"{path}: task_filter must be false or a list of task names"
            )
    return EvalConfig(**doc)


def write_submission(embeddings: EmbeddingSet, path) -> Path:
    """Serialize an EmbeddingSet in the submission CSV format (round-trips)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id"] + [f"e{i}" for i in range(embeddings.dim)])
        for sample_id, row in zip(embeddings.ids, embeddings.values):
            writer.writerow([sample_id] + [repr(float(v)) for v in row])
    return path


def write_task(task: TaskDataset, directory) -> Path:
    """Serialize a TaskDataset as ``<name>__regr.csv`` / ``<name>__cls.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = _REGR_SUFFIX if task.kind == REGRESSION else _CLS_SUFFIX
    path = directory / f"{task.name}{suffix}.csv"
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "label"])
        for sample_id, value in zip(task.ids, task.labels):
            writer.writerow([sample_id, repr(float(value))])
    return path
