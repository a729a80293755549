from .brute import Enumeration, brute_force_fit, enumerate_valid_partitions
from .exact import (
    FitConfig,
    Penalty,
    PenalizedFit,
    RiskFrontier,
    fit_constrained,
    fit_penalized,
    fit_penalized_detail,
    risk_frontier,
)
from .greedy import greedy_fit

__all__ = [
    "Enumeration",
    "FitConfig",
    "Penalty",
    "PenalizedFit",
    "RiskFrontier",
    "brute_force_fit",
    "enumerate_valid_partitions",
    "fit_constrained",
    "fit_penalized",
    "fit_penalized_detail",
    "greedy_fit",
    "risk_frontier",
]
