"""Learning to re-rank box proposals with top-k partial ranking constraints."""

from .core import (
    Box,
    Candidate,
    DataError,
    Dataset,
    GroundTruthObject,
    ImageRecord,
    dataset_digest,
    dataset_from_lines,
    dataset_to_lines,
    iou,
    label_candidates,
    label_dataset,
    rank_by_label,
    read_dataset,
    write_dataset,
)
from .features import (
    GrayImage,
    HogConfig,
    PgmDirectory,
    crop_and_resize,
    describe_box,
    featurize_dataset,
    hog,
    read_pgm,
)
from .metrics import (
    ComparisonReport,
    EvalConfig,
    EvalReport,
    best_overlap,
    detection_rate,
    evaluate,
    identity_rankings,
    mabo,
    report,
)
from .ranking import (
    ConstraintPartition,
    NumericError,
    TrainedModel,
    TrainingConfig,
    build_full_constraints,
    build_partial_constraints,
    constraint_count,
    load_model,
    negatives_cap,
    objective,
    rerank,
    save_model,
    score,
    train_full_rank_baseline,
    train_soft_margin,
)
from .synthdata import (
    SynthConfig,
    generate_feature_dataset,
    generate_geometric_dataset,
    synth_metadata,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Candidate",
    "ComparisonReport",
    "ConstraintPartition",
    "DataError",
    "Dataset",
    "EvalConfig",
    "EvalReport",
    "GrayImage",
    "GroundTruthObject",
    "HogConfig",
    "ImageRecord",
    "NumericError",
    "PgmDirectory",
    "SynthConfig",
    "TrainedModel",
    "TrainingConfig",
    "best_overlap",
    "build_full_constraints",
    "build_partial_constraints",
    "constraint_count",
    "crop_and_resize",
    "dataset_digest",
    "dataset_from_lines",
    "dataset_to_lines",
    "describe_box",
    "detection_rate",
    "evaluate",
    "featurize_dataset",
    "generate_feature_dataset",
    "generate_geometric_dataset",
    "hog",
    "identity_rankings",
    "iou",
    "label_candidates",
    "label_dataset",
    "load_model",
    "mabo",
    "negatives_cap",
    "objective",
    "rank_by_label",
    "read_dataset",
    "read_pgm",
    "report",
    "rerank",
    "save_model",
    "score",
    "synth_metadata",
    "train_full_rank_baseline",
    "train_soft_margin",
    "write_dataset",
    "__version__",
]
