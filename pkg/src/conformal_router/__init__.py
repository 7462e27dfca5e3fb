"""Uncertainty-aware routing between a cheap and an expensive language model.

The cheap model's option probabilities are turned into conformal
prediction sets with a finite-sample coverage guarantee; prompts with
small sets stay cheap, the rest escalate. The error rate behind the sets
is picked automatically by maximizing an entropy criterion over the
set-size distribution.
"""

from .conformal import (
    CalibrationModel,
    OptionDistribution,
    PredictionSet,
    calibrate,
    empirical_coverage,
    prediction_set,
    quantile_threshold,
    score,
    softmax_over_options,
)
from .dataset import (
    MCQRecord,
    SplitSpec,
    grade_open_qa,
    load_records,
    mcqify_open_qa,
    save_records,
    split,
)
from .errors import (
    BackendError,
    BackendUnavailableError,
    ConformalRouterError,
    DataError,
    ProtocolError,
    RecordErrorReport,
    StrategyUnavailableError,
    ValidationError,
)
from .evaluation import (
    EvaluationReport,
    UndefinedTokenUtility,
    accuracy,
    apss,
    compare,
    evaluate_strategy,
    token_reduction_ratio,
    token_utility,
)
from .fbe import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_BETA,
    FBEReport,
    SetSizeHistogram,
    binary_entropy,
    fbe,
    full_entropy,
    select_alpha,
)
from .routing import (
    RoutingDecision,
    StrategyConfig,
    StrategyKind,
    Target,
    route_cp,
    route_dynathink,
    route_entropy,
    route_explicit,
    route_random,
    route_top1,
    run_strategy,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationModel",
    "OptionDistribution",
    "PredictionSet",
    "calibrate",
    "empirical_coverage",
    "prediction_set",
    "quantile_threshold",
    "score",
    "softmax_over_options",
    "MCQRecord",
    "SplitSpec",
    "grade_open_qa",
    "load_records",
    "mcqify_open_qa",
    "save_records",
    "split",
    "BackendError",
    "BackendUnavailableError",
    "ConformalRouterError",
    "DataError",
    "ProtocolError",
    "RecordErrorReport",
    "StrategyUnavailableError",
    "ValidationError",
    "EvaluationReport",
    "UndefinedTokenUtility",
    "accuracy",
    "apss",
    "compare",
    "evaluate_strategy",
    "token_reduction_ratio",
    "token_utility",
    "DEFAULT_ALPHA_GRID",
    "DEFAULT_BETA",
    "FBEReport",
    "SetSizeHistogram",
    "binary_entropy",
    "fbe",
    "full_entropy",
    "select_alpha",
    "RoutingDecision",
    "StrategyConfig",
    "StrategyKind",
    "Target",
    "route_cp",
    "route_dynathink",
    "route_entropy",
    "route_explicit",
    "route_random",
    "route_top1",
    "run_strategy",
    "__version__",
]
