"""Cross-fitting engine: nuisance graphs, fold schedules, and reuse-aware execution."""

from .aggregators import mean_estimate, mean_predictor, median_estimate, median_predictor
from .cache import FitCache
from .engine import FailureRecord, RunResult, crossfit, crossfit_multi
from .errors import CrossfitError, ErrorCode, SpecificationError
from .folds import (
    Allocation,
    FoldAssignment,
    Window,
    audit_schedule,
    default_fold_split,
    fixed_fold_split,
    min_folds_required,
)
from .spec import (
    MethodSpec,
    Mode,
    NuisanceSpec,
    ValidationReport,
    create_method,
    create_nuisance,
    validate_method,
)
from .tabular import Dataset, read_csv

__all__ = [
    "Allocation",
    "CrossfitError",
    "Dataset",
    "ErrorCode",
    "FailureRecord",
    "FitCache",
    "FoldAssignment",
    "MethodSpec",
    "Mode",
    "NuisanceSpec",
    "RunResult",
    "SpecificationError",
    "ValidationReport",
    "Window",
    "audit_schedule",
    "create_method",
    "create_nuisance",
    "crossfit",
    "crossfit_multi",
    "default_fold_split",
    "fixed_fold_split",
    "mean_estimate",
    "mean_predictor",
    "median_estimate",
    "median_predictor",
    "min_folds_required",
    "read_csv",
    "validate_method",
]
