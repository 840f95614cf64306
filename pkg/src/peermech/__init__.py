"""Probe-based peer grading: accuracy estimation, expected-reward scoring and
marginal-contribution transfers, with mean/median/Gibbs baselines."""

__version__ = "0.1.0"

from .assignment import AssignmentPlan, ConfigurationError, build_assignment, validate
from .baselines import GibbsConfig, gibbs_continuous, gibbs_discrete, mean_scores, median_scores
from .estimation import estimate_continuous, estimate_discrete
from .mechanism import (
    MechanismOutcome,
    erm_score_continuous,
    erm_score_discrete,
    run_trupeqa,
    transfer_for_paper,
)
from .model import (
    TAU_CAP,
    ContinuousAccuracy,
    ContinuousModelParams,
    DiscreteAccuracy,
    DiscreteModelParams,
    DomainError,
    EstimationError,
    GradeMatrix,
    InputError,
    continuous_error_density,
    discrete_error_pmf,
)

__all__ = [
    "AssignmentPlan",
    "ConfigurationError",
    "build_assignment",
    "validate",
    "GibbsConfig",
    "gibbs_continuous",
    "gibbs_discrete",
    "mean_scores",
    "median_scores",
    "estimate_continuous",
    "estimate_discrete",
    "MechanismOutcome",
    "erm_score_continuous",
    "erm_score_discrete",
    "run_trupeqa",
    "transfer_for_paper",
    "TAU_CAP",
    "ContinuousAccuracy",
    "ContinuousModelParams",
    "DiscreteAccuracy",
    "DiscreteModelParams",
    "DomainError",
    "EstimationError",
    "GradeMatrix",
    "InputError",
    "continuous_error_density",
    "discrete_error_pmf",
]
