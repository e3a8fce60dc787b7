"""One-shot evaluation pipeline, the polling challenge service, and the CLI.

The service mode watches a directory for ``*.csv`` submissions, evaluates
them sequentially in filename order, moves each to ``done/`` or ``failed/``,
and refreshes the leaderboard after every success. Fold evaluations inside a
single submission may run on a thread pool; results are reduced in fold
order, so any pool size reproduces the sequential output bit for bit.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import probe, scoring, synth
from .errors import EngineError, IoFailure, MissingId
from .ingest import (
    EvalConfig,
    load_annotations,
    load_config,
    parse_submission,
    write_submission,
    write_task,
)
from .leaderboard import (
    ExperimentRecord,
    Leaderboard,
    ScoringDatabase,
    TaskResult,
    discard_stale_staging,
    rebuild_leaderboard,
    record_experiment,
    write_outputs,
)

logger = logging.getLogger(__name__)

PENDING = "pending"
EVALUATING = "evaluating"
DONE = "done"
FAILED = "failed"

DB_FILENAME = "scoring_db.jsonl"


@dataclass
class SubmissionTicket:
    """Lifecycle of one queued submission: pending -> evaluating -> done|failed."""

    path: Path
    method: str
    phase: str
    discovered_at: datetime
    status: str = PENDING
    reason: str | None = None


def _mean_secondary(folds) -> dict[str, float]:
    keys: list[str] = []
    for fold in folds:
        for key in fold.secondary:
            if key not in keys:
                keys.append(key)
    means = {}
    for key in sorted(keys):
        values = [f.secondary[key] for f in folds if key in f.secondary]
        means[key] = sum(values) / len(values)
    return means


def _evaluate_task(embeddings, task, config: EvalConfig, workers: int):
    plan = probe.make_splits(task.ids, config.k_folds, config.split_ratio, config.seed)

    def run_fold(fold_index: int):
        return probe.evaluate_fold(
            embeddings,
            task,
            plan.folds[fold_index],
            config,
            probe.fold_training_seed(config.seed, task.name, fold_index),
            fold_index=fold_index,
            capture_predictions=True,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            folds = list(pool.map(run_fold, range(config.k_folds)))
    else:
        folds = [run_fold(i) for i in range(config.k_folds)]
    return folds  # ordered by fold index either way


def evaluate_submission(
    submission_file,
    annotation_dir,
    config: EvalConfig,
    method: str,
    phase: str,
    output_dir,
    workers: int = 1,
    timestamp: datetime | None = None,
    write_diagnostics: bool = True,
) -> ExperimentRecord:
    """Run the full pipeline on one submission and persist the results.

    Parses and validates all inputs, trains k probes per task, computes the
    quality scores, appends the record to the scoring database under
    ``output_dir``, and writes the experiment directory plus the refreshed
    phase leaderboard. Raises (without touching the database or leaderboard)
    if any input is invalid or any task id is missing from the submission.
    """
    submission_file = Path(submission_file)
    if timestamp is None:
        timestamp = datetime.now(timezone.utc)

    submission_hash = hashlib.sha256(submission_file.read_bytes()).hexdigest()
    embeddings = parse_submission(submission_file, config.embedding_dim)
    tasks = load_annotations(annotation_dir, config.task_filter)

    for task in tasks:
        missing = [s for s in task.ids if not embeddings.has(s)]
        if missing:
            raise MissingId(
                f"task '{task.name}': {len(missing)} label ids missing from the "
                f"submission (first: '{missing[0]}')"
            )

    if config.standardize_embeddings:
        embeddings = probe.standardize(embeddings)

    task_results: dict[str, TaskResult] = {}
    fold_scores: dict[str, list] = {}
    for task in tasks:
        started = time.perf_counter()
        prepared = probe.normalize_labels(task) if config.normalize_labels else task
        folds = _evaluate_task(embeddings, prepared, config, workers)
        primaries = [f.primary for f in folds]
        quality = scoring.quality_score(primaries, config.epsilon, task=task.name)
        warnings = tuple(dict.fromkeys(w for f in folds for w in f.warnings))
        task_results[task.name] = TaskResult(
            kind=task.kind,
            fold_primaries=tuple(primaries),
            quality=quality,
            secondary=_mean_secondary(folds),
            warnings=warnings,
        )
        fold_scores[task.name] = folds
        logger.info(
            "task %s: %d folds in %.2fs (q=%.3f)",
            task.name,
            len(folds),
            time.perf_counter() - started,
            quality.q,
        )

    record = ExperimentRecord(
        phase=phase,
        method=method,
        timestamp=timestamp,
        epsilon=config.epsilon,
        tasks=task_results,
        config_fingerprint=config.fingerprint(),
        submission_fingerprint=submission_hash,
    )

    db = ScoringDatabase(Path(output_dir) / DB_FILENAME)
    record_experiment(db, record)
    board = rebuild_leaderboard(
        db,
        phase,
        weighted=config.weighted_ranking,
        ghost=config.ghost_task,
        epsilon=config.epsilon,
    )
    write_outputs(
        record,
        board,
        output_dir,
        method,
        phase,
        fold_scores=fold_scores if write_diagnostics else None,
    )
    return record


def serve(
    watch_dir,
    annotation_dir,
    config: EvalConfig,
    output_dir,
    phase: str,
    interval_seconds: float = 60.0,
    workers: int = 1,
    max_polls: int | None = None,
    on_leaderboard=None,
    sleep=time.sleep,
) -> list[SubmissionTicket]:
    """Poll ``watch_dir`` for submissions until stopped.

    Each poll picks up every top-level ``*.csv`` (in filename order), derives
    the method name from the filename stem, evaluates it, and moves the file
    to ``done/`` or ``failed/`` (with a ``.error.txt`` note). A failure never
    stops the loop. Files are only moved after their terminal state is known,
    so a crash-restart simply re-discovers unprocessed submissions.

    ``max_polls`` bounds the number of poll cycles (None = run forever);
    ``on_leaderboard`` is called with the rebuilt Leaderboard after each
    successful evaluation. Returns the processed tickets.
    """
    watch_dir = Path(watch_dir)
    if not watch_dir.is_dir():
        raise IoFailure(f"watch directory '{watch_dir}' does not exist")
    done_dir = watch_dir / "done"
    failed_dir = watch_dir / "failed"
    tickets: list[SubmissionTicket] = []

    # crash recovery: drop half-written experiment directories from a
    # previous incarnation before picking up the queue again
    for stale in discard_stale_staging(output_dir):
        logger.warning("removed stale staging entry %s", stale)

    polls = 0
    while True:
        for path in sorted(watch_dir.glob("*.csv")):
            if not path.is_file():
                continue
            ticket = SubmissionTicket(
                path=path,
                method=path.stem,
                phase=phase,
                discovered_at=datetime.now(timezone.utc),
            )
            tickets.append(ticket)
            ticket.status = EVALUATING
            try:
                evaluate_submission(
                    path,
                    annotation_dir,
                    config,
                    method=ticket.method,
                    phase=phase,
                    output_dir=output_dir,
                    workers=workers,
                )
            except (EngineError, OSError) as exc:
                ticket.status = FAILED
                ticket.reason = f"{type(exc).__name__}: {exc}"
                logger.warning("submission %s failed: %s", path.name, ticket.reason)
                failed_dir.mkdir(exist_ok=True)
                path.replace(failed_dir / path.name)
                (failed_dir / f"{path.name}.error.txt").write_text(
                    ticket.reason + "\n", encoding="utf-8"
                )
            else:
                ticket.status = DONE
                done_dir.mkdir(exist_ok=True)
                path.replace(done_dir / path.name)
                logger.info("submission %s scored", path.name)
                if on_leaderboard is not None:
                    db = ScoringDatabase(Path(output_dir) / DB_FILENAME)
                    on_leaderboard(
                        rebuild_leaderboard(
                            db,
                            phase,
                            weighted=config.weighted_ranking,
                            ghost=config.ghost_task,
                            epsilon=config.epsilon,
                        )
                    )
        polls += 1
        if max_polls is not None and polls >= max_polls:
            return tickets
        sleep(interval_seconds)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embeval",
        description="Score fixed-size embedding submissions against hidden "
        "downstream tasks with k-fold probes and a weighted leaderboard.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evaluate", help="score one submission file")
    ev.add_argument("--annotation_path", required=True, help="directory of task CSVs")
    ev.add_argument("--submission_file", required=True, help="submission CSV")
    ev.add_argument("--output_dir", required=True, help="results directory")
    ev.add_argument("--config", required=True, help="YAML config file")
    ev.add_argument("--method_name", required=True, help="free-string method label")
    ev.add_argument("--phase", required=True, help="free-string phase label")
    ev.add_argument("--workers", type=int, default=1, help="fold worker threads")

    sv = sub.add_parser("serve", help="poll a directory for submissions")
    sv.add_argument("--watch_dir", required=True)
    sv.add_argument("--interval_seconds", type=float, default=60.0)
    sv.add_argument("--annotation_path", required=True)
    sv.add_argument("--config", required=True)
    sv.add_argument("--output_dir", required=True)
    sv.add_argument("--phase", required=True)
    sv.add_argument("--workers", type=int, default=1)

    sy = sub.add_parser("synth", help="emit a synthetic submission + annotations")
    sy.add_argument("--output_dir", required=True)
    sy.add_argument("--n_samples", type=int, default=200)
    sy.add_argument("--dim", type=int, default=16)
    sy.add_argument("--signal_dims", type=int, default=4)
    sy.add_argument("--noise_sigma", type=float, default=0.1)
    sy.add_argument("--zero_fraction", type=float, default=0.9)
    sy.add_argument("--seed", type=int, default=7)
    return parser


def _cmd_synth(args) -> int:
    out = Path(args.output_dir)
    embeddings = synth.gen_random_embeddings(args.n_samples, args.dim, args.seed)
    tasks = [
        synth.linear_labels(embeddings, args.signal_dims, 0.0, args.seed, "synth_clean"),
        synth.linear_labels(
            embeddings, args.signal_dims, args.noise_sigma, args.seed + 1, "synth_noisy"
        ),
        synth.gen_majority_zero_task(
            args.n_samples, args.zero_fraction, "classification", args.seed + 2, "synth_random"
        ),
    ]
    submission = write_submission(embeddings, out / "submission.csv")
    annotation_dir = out / "annotations"
    paths = [write_task(task, annotation_dir) for task in tasks]
    for path in [submission, *paths]:
        print(path)
    return 0


def run_cli(argv=None) -> int:
    """CLI entry point. Exit status: 0 done, 1 evaluation failure, 2 usage error."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            config = load_config(args.config)
            evaluate_submission(
                args.submission_file,
                args.annotation_path,
                config,
                method=args.method_name,
                phase=args.phase,
                output_dir=args.output_dir,
                workers=args.workers,
            )
            return 0
        if args.command == "serve":
            config = load_config(args.config)
            serve(
                args.watch_dir,
                args.annotation_path,
                config,
                args.output_dir,
                args.phase,
                interval_seconds=args.interval_seconds,
                workers=args.workers,
            )
            return 0
        if args.command == "synth":
            return _cmd_synth(args)
    except EngineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
