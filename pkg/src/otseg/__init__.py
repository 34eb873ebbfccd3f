"""Transferability scoring for semantic segmentation.

Scores how well a source segmentation model should transfer to a target
task by coupling source and target pixel features through entropic optimal
transport and measuring the conditional entropy of target labels given
source labels. Ships a scoring service, a thin CLI client, an evaluation
harness, and a synthetic benchmark generator.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceWarning,
    DimensionError,
    EmptySetError,
    FormatError,
    InputError,
    NumericalError,
    OtsegError,
    RunError,
    SizeError,
    UndefinedCorrelationError,
    ValidationError,
)
from .exports import (
    DEFAULT_IGNORE_LABELS,
    PixelSet,
    TaskExport,
    export_info,
    flatten_to_pixelset,
    load_task_export,
    save_task_export,
    save_task_export_dir,
)
from .solver import (
    CostMatrix,
    CouplingMatrix,
    SinkhornConfig,
    compute_cost_matrix,
    exact_ot_oracle,
    sinkhorn,
    transport_cost,
)
from .metric import (
    LabelJoint,
    SamplingConfig,
    TransferScore,
    conditional_entropy,
    label_joint_from_coupling,
    mix_seed,
    otce_sampled,
    otce_single,
    score_task_exports,
)
from .stats import pearson, spearman
from .evaluation import (
    CorrelationReport,
    EvalManifest,
    EvalRecord,
    ScoreCache,
    load_manifest,
    run_evaluation,
    save_manifest,
    write_report_csv,
    write_report_json,
    write_report_svgs,
)
from .synth import AccuracyModel, SyntheticSpec, generate_manifest, generate_pair, generate_pair_exports

__all__ = [
    "__version__",
    "AccuracyModel",
    "ConvergenceWarning",
    "CorrelationReport",
    "CostMatrix",
    "CouplingMatrix",
    "DEFAULT_IGNORE_LABELS",
    "DimensionError",
    "EmptySetError",
    "EvalManifest",
    "EvalRecord",
    "FormatError",
    "InputError",
    "LabelJoint",
    "NumericalError",
    "OtsegError",
    "PixelSet",
    "RunError",
    "SamplingConfig",
    "ScoreCache",
    "SinkhornConfig",
    "SizeError",
    "SyntheticSpec",
    "TaskExport",
    "TransferScore",
    "UndefinedCorrelationError",
    "ValidationError",
    "compute_cost_matrix",
    "conditional_entropy",
    "exact_ot_oracle",
    "export_info",
    "flatten_to_pixelset",
    "generate_manifest",
    "generate_pair",
    "generate_pair_exports",
    "label_joint_from_coupling",
    "load_manifest",
    "load_task_export",
    "mix_seed",
    "otce_sampled",
    "otce_single",
    "pearson",
    "run_evaluation",
    "save_manifest",
    "save_task_export",
    "save_task_export_dir",
    "score_task_exports",
    "sinkhorn",
    "spearman",
    "transport_cost",
    "write_report_csv",
    "write_report_json",
    "write_report_svgs",
]
