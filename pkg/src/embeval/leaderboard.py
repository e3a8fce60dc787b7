"""Scoring database, leaderboard construction, and on-disk outputs.

The scoring database is a single append-only JSON-lines file: one experiment
record per line, raw fold scores included, so every quality score can be
recomputed from what is stored. The leaderboard is rebuilt from the database
(never mutated in place) and written as human-readable JSON; all file writes
go through write-temp-then-rename so readers never observe a partial file.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import jsonschema

from . import scoring
from .errors import DuplicateRecord, IoFailure, MismatchedTasks, UnknownPhase
from .metrics import FoldScore
from .scoring import TaskQuality, TaskWeights

logger = logging.getLogger(__name__)

LEADERBOARD_SCHEMA = {
    "type": "object",
    "required": ["phase", "generated_at", "tasks", "entries"],
    "additionalProperties": False,
    "properties": {
        "phase": {"type": "string"},
        "generated_at": {"type": "string"},
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "weight", "std"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "weight": {"type": "number"},
                    "std": {"type": "number"},
                },
            },
        },
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "method",
                    "timestamp",
                    "q_per_task",
                    "mean_q",
                    "weighted_score",
                    "rank",
                ],
                "additionalProperties": False,
                "properties": {
                    "method": {"type": "string"},
                    "timestamp": {"type": "string"},
                    "q_per_task": {
                        "type": "object",
                        "additionalProperties": {"type": "number"},
                    },
                    "mean_q": {"type": "number"},
                    "weighted_score": {"type": "number"},
                    "rank": {"type": "integer"},
                },
            },
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass(frozen=True)
class TaskResult:
    """Everything one experiment produced on one task."""

    kind: str
    fold_primaries: tuple[float, ...]
    quality: TaskQuality
    secondary: dict[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ExperimentRecord:
    """One scored submission; (phase, method, timestamp) is unique."""

    phase: str
    method: str
    timestamp: datetime
    epsilon: float
    tasks: dict[str, TaskResult]
    config_fingerprint: str
    submission_fingerprint: str

    def key(self) -> tuple[str, str, str]:
        return (self.phase, self.method, _iso(self.timestamp))

    def mean_q(self) -> float:
        return scoring.mean_q(self.tasks[t].quality for t in sorted(self.tasks))

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "method": self.method,
            "timestamp": _iso(self.timestamp),
            "epsilon": self.epsilon,
            "config_fingerprint": self.config_fingerprint,
            "submission_fingerprint": self.submission_fingerprint,
            "tasks": {
                name: {
                    "kind": result.kind,
                    "fold_primaries": list(result.fold_primaries),
                    "quality": {
                        "mean_s": result.quality.mean_s,
                        "std_s": result.quality.std_s,
                        "q": result.quality.q,
                        "k_used": result.quality.k_used,
                        "unreliable": result.quality.unreliable,
                    },
                    "secondary": dict(result.secondary),
                    "warnings": list(result.warnings),
                }
                for name, result in self.tasks.items()
            },
        }

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentRecord":
        tasks = {}
        for name, body in doc["tasks"].items():
            quality = TaskQuality(
                task=name,
                mean_s=body["quality"]["mean_s"],
                std_s=body["quality"]["std_s"],
                q=body["quality"]["q"],
                k_used=body["quality"]["k_used"],
                unreliable=body["quality"]["unreliable"],
            )
            tasks[name] = TaskResult(
                kind=body["kind"],
                fold_primaries=tuple(body["fold_primaries"]),
                quality=quality,
                secondary=dict(body["secondary"]),
                warnings=tuple(body["warnings"]),
            )
        return ExperimentRecord(
            phase=doc["phase"],
            method=doc["method"],
            timestamp=datetime.fromisoformat(doc["timestamp"]),
            epsilon=doc["epsilon"],
            tasks=tasks,
            config_fingerprint=doc["config_fingerprint"],
            submission_fingerprint=doc["submission_fingerprint"],
        )


def _iso(moment: datetime) -> str:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).isoformat()


class ScoringDatabase:
    """Append-only JSONL store of experiment records. Single writer.

    A write torn by a crash leaves an unparseable final line; that line is
    dropped on load (the record was never durable) and overwritten by the
    next append. An unparseable line anywhere else is real corruption and
    raises IoFailure.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._records: list[ExperimentRecord] = []
        self._keys: set[tuple[str, str, str]] = set()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                lines = handle.read().splitlines()
            kept = 0
            for number, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                try:
                    record = ExperimentRecord.from_dict(json.loads(line))
                except (ValueError, KeyError) as exc:
                    if number == len(lines):
                        logger.warning(
                            "dropping torn final line of %s: %s", self.path, exc
                        )
                        self._truncate_to(kept)
                        break
                    raise IoFailure(
                        f"{self.path}:{number}: corrupt record: {exc}"
                    ) from exc
                self._records.append(record)
                self._keys.add(record.key())
                kept = number

    def _truncate_to(self, line_count: int) -> None:
        with open(self.path, encoding="utf-8") as handle:
            lines = handle.read().splitlines(keepends=True)
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.writelines(lines[:line_count])
            handle.flush()
            os.fsync(handle.fileno())

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[ExperimentRecord, ...]:
        return tuple(self._records)

    def phases(self) -> tuple[str, ...]:
        return tuple(sorted({r.phase for r in self._records}))

    def for_phase(self, phase: str) -> list[ExperimentRecord]:
        return [r for r in self._records if r.phase == phase]

    def append(self, record: ExperimentRecord) -> None:
        key = record.key()
        if key in self._keys:
            raise DuplicateRecord(f"record {key} already stored")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        line = json.dumps(record.to_dict(), sort_keys=True)
        try:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
                os.fsync(handle.fileno())
        except OSError as exc:
            raise IoFailure(f"cannot append to {self.path}: {exc}") from exc
        self._records.append(record)
        self._keys.add(key)


def record_experiment(db: ScoringDatabase, record: ExperimentRecord) -> ScoringDatabase:
    """Append one record; prior records stay immutable."""
    db.append(record)
    return db


@dataclass(frozen=True)
class LeaderboardEntry:
    method: str
    timestamp: datetime
    q_per_task: dict[str, float]
    mean_q: float
    weighted_score: float
    rank: int


@dataclass(frozen=True)
class Leaderboard:
    """Ranked table for one phase, derived purely from the scoring database."""

    phase: str
    generated_at: datetime
    tasks: tuple[tuple[str, float, float], ...]  # (name, weight, std)
    entries: tuple[LeaderboardEntry, ...]
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        doc = {
            "phase": self.phase,
            "generated_at": _iso(self.generated_at),
            "tasks": [
                {"name": name, "weight": weight, "std": std}
                for name, weight, std in self.tasks
            ],
            "entries": [
                {
                    "method": e.method,
                    "timestamp": _iso(e.timestamp),
                    "q_per_task": dict(e.q_per_task),
                    "mean_q": e.mean_q,
                    "weighted_score": e.weighted_score,
                    "rank": e.rank,
                }
                for e in self.entries
            ],
        }
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc


def rebuild_leaderboard(
    db: ScoringDatabase,
    phase: str,
    weighted: bool = True,
    ghost: bool = False,
    epsilon: float = scoring.DEFAULT_EPSILON,
) -> Leaderboard:
    """Recompute the phase leaderboard from the database.

    When a method has several records in the phase, its latest timestamp
    enters the ranking; all history stays in the database for replay. The
    result depends only on database contents (generated_at is the newest
    contributing record's timestamp, not the wall clock).
    """
    records = db.for_phase(phase)
    if not records:
        raise UnknownPhase(f"no records for phase '{phase}'")

    latest: dict[str, ExperimentRecord] = {}
    for record in records:
        current = latest.get(record.method)
        if current is None or record.timestamp > current.timestamp:
            latest[record.method] = record

    chosen = [latest[m] for m in sorted(latest)]
    task_names = sorted(chosen[0].tasks)
    for record in chosen:
        if sorted(record.tasks) != task_names:
            raise MismatchedTasks(
                f"method '{record.method}' was scored on a different task set"
            )

    per_experiment_q = {
        record.method: {t: record.tasks[t].quality.q for t in task_names}
        for record in chosen
    }
    ranking = scoring.final_ranking(
        per_experiment_q, ghost=ghost, epsilon=epsilon, weighted=weighted
    )

    entries = [
        LeaderboardEntry(
            method=record.method,
            timestamp=record.timestamp,
            q_per_task=per_experiment_q[record.method],
            mean_q=ranking.mean_q[record.method],
            weighted_score=ranking.scores[record.method],
            rank=ranking.ranks[record.method],
        )
        for record in chosen
    ]
    entries.sort(key=lambda e: (e.rank, -e.mean_q, e.method))

    warnings = ()
    if ranking.weights.uniform_fallback:
        warnings = (scoring.UNIFORM_WEIGHTS_WARNING,)

    return Leaderboard(
        phase=phase,
        generated_at=max(r.timestamp for r in chosen),
        tasks=tuple(
            (name, ranking.weights.weights[name], ranking.weights.stds[name])
            for name in task_names
        ),
        entries=tuple(entries),
        warnings=warnings,
    )


def discard_stale_staging(output_dir) -> list[Path]:
    """Remove dot-prefixed staging leftovers from interrupted runs.

    Experiment directories and the leaderboard are published by renaming a
    dot-prefixed temporary; anything still carrying that prefix after a crash
    was never part of the results and can be deleted.
    """
    output_dir = Path(output_dir)
    removed = []
    if not output_dir.is_dir():
        return removed
    for phase_dir in output_dir.iterdir():
        if not phase_dir.is_dir():
            continue
        for entry in phase_dir.iterdir():
            if entry.name.startswith("."):
                if entry.is_dir():
                    shutil.rmtree(entry, ignore_errors=True)
                else:
                    entry.unlink(missing_ok=True)
                removed.append(entry)
    return removed


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory plus atomic rename."""
    path = Path(path)
    try:
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def result_document(record: ExperimentRecord) -> dict:
    doc = record.to_dict()
    doc["mean_q"] = record.mean_q()
    return doc


def _write_fold_diagnostics(task_dir: Path, folds: list[FoldScore]) -> None:
    for fold in folds:
        fold_dir = task_dir / f"fold_{fold.fold_index:03d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,loss"]
        lines += [f"{i},{loss!r}" for i, loss in enumerate(fold.loss_curve)]
        (fold_dir / "loss_curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if fold.predictions is not None:
            lines = ["id,y_true,y_pred"]
            lines += [f"{sid},{yt!r},{yp!r}" for sid, yt, yp in fold.predictions]
            (fold_dir / "predictions.csv").write_text(
                "\n".join(lines) + "\n", encoding="utf-8"
            )
        counts = {k: fold.secondary[k] for k in ("tp", "fp", "tn", "fn") if k in fold.secondary}
        if counts:
            (fold_dir / "confusion.json").write_text(
                _dump_json({k: int(v) for k, v in counts.items()}), encoding="utf-8"
            )


def write_outputs(
    record: ExperimentRecord,
    leaderboard: Leaderboard,
    output_dir,
    method: str,
    phase: str,
    fold_scores: dict[str, list[FoldScore]] | None = None,
) -> dict[str, Path]:
    """Write the experiment directory and refresh the phase leaderboard.

    Creates ``<output_dir>/<phase>/<method>_<YYYYMMDD>_<HHmmSS>/`` (suffixing
    ``_2``, ``_3``, ... on a same-second collision) with ``result.json`` and
    per-task fold diagnostics, then atomically rewrites
    ``<output_dir>/<phase>/leaderboard.json``. The experiment directory is
    staged under a temporary name and renamed, so interrupted runs leave no
    half-written experiment behind.
    """
    phase_dir = Path(output_dir) / phase
    try:
        phase_dir.mkdir(parents=True, exist_ok=True)

        stamp = record.timestamp.astimezone(timezone.utc).strftime("%Y%m%d_%H%M%S")
        base = f"{method}_{stamp}"
        name = base
        suffix = 2
        while (phase_dir / name).exists():
            name = f"{base}_{suffix}"
            suffix += 1
        final_dir = phase_dir / name

        staging = Path(tempfile.mkdtemp(dir=phase_dir, prefix=f".{name}.tmp"))
        try:
            (staging / "result.json").write_text(
                _dump_json(result_document(record)), encoding="utf-8"
            )
            if fold_scores:
                for task_name, folds in fold_scores.items():
                    _write_fold_diagnostics(staging / "tasks" / task_name, folds)
            os.rename(staging, final_dir)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write outputs under {phase_dir}: {exc}") from exc

    doc = leaderboard.to_json_dict()
    jsonschema.validate(doc, LEADERBOARD_SCHEMA)
    leaderboard_path = phase_dir / "leaderboard.json"
    atomic_write_text(leaderboard_path, _dump_json(doc))

    return {
        "experiment_dir": final_dir,
        "result": final_dir / "result.json",
        "leaderboard": leaderboard_path,
    }
