"""Benchmark engine for fixed-size embedding submissions.

Evaluates a submission of id-keyed embedding vectors against hidden
downstream tasks via k-fold probing, scores each task with a
noise-regulated quality score, and ranks competing experiments on a
task-weighted leaderboard. See the README for the CLI and file formats.
"""

from .errors import EngineError
from .ingest import (
    CLASSIFICATION,
    REGRESSION,
    EmbeddingSet,
    EvalConfig,
    TaskDataset,
    load_annotations,
    load_config,
    parse_submission,
    parse_task,
    write_submission,
    write_task,
)
from .leaderboard import (
    ExperimentRecord,
    Leaderboard,
    ScoringDatabase,
    TaskResult,
    rebuild_leaderboard,
    record_experiment,
    write_outputs,
)
from .metrics import ConfusionMatrix, FoldScore
from .probe import (
    ProbeModel,
    SplitPlan,
    evaluate_fold,
    make_splits,
    normalize_labels,
    predict,
    standardize,
    train_probe,
)
from .runner import SubmissionTicket, evaluate_submission, run_cli, serve
from .scoring import (
    DEFAULT_EPSILON,
    RankingResult,
    TaskQuality,
    TaskWeights,
    final_ranking,
    mean_q,
    quality_score,
    rank_values,
    task_weights,
    weighted_rank_score,
)
from .synth import (
    SynthSpec,
    gen_linear_task,
    gen_majority_zero_task,
    gen_random_embeddings,
    linear_labels,
    ols_oracle,
    ols_predict,
)

__version__ = "0.1.0"

__all__ = [
    "EngineError",
    "EmbeddingSet",
    "TaskDataset",
    "EvalConfig",
    "REGRESSION",
    "CLASSIFICATION",
    "parse_submission",
    "parse_task",
    "load_annotations",
    "load_config",
    "write_submission",
    "write_task",
    "SplitPlan",
    "ProbeModel",
    "make_splits",
    "standardize",
    "normalize_labels",
    "train_probe",
    "predict",
    "evaluate_fold",
    "ConfusionMatrix",
    "FoldScore",
    "DEFAULT_EPSILON",
    "TaskQuality",
    "TaskWeights",
    "RankingResult",
    "quality_score",
    "mean_q",
    "rank_values",
    "task_weights",
    "weighted_rank_score",
    "final_ranking",
    "ExperimentRecord",
    "TaskResult",
    "Leaderboard",
    "ScoringDatabase",
    "record_experiment",
    "rebuild_leaderboard",
    "write_outputs",
    "SubmissionTicket",
    "evaluate_submission",
    "serve",
    "run_cli",
    "SynthSpec",
    "gen_linear_task",
    "gen_majority_zero_task",
    "gen_random_embeddings",
    "linear_labels",
    "ols_oracle",
    "ols_predict",
    "__version__",
]
