"""Weighted estimating equations that integrate big data with probability samples."""

from .exceptions import (ConfigError, ConstructionError, DesignInformationError,
                         DomainError, NumericError, RankDeficiencyError, SolverError,
                         UnsupportedStrategyError)
from .estfun import (EstimatingFunction, Observation, eval_psi_s, gini_function,
                     linreg_function, mean_function, psi_mle, quantile_function)
from .solve import SolveResult, gini, newton_solve, weighted_quantile, wls
from .weights import (MembershipRealization, WeightVector, bigdata_weights,
                      horvitz_thompson, integrate, normalize, unit_weights)
from .estimators import EstimateReport, WeightedEstimator

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstructionError", "DesignInformationError", "DomainError",
    "NumericError", "RankDeficiencyError", "SolverError", "UnsupportedStrategyError",
    "EstimatingFunction", "Observation", "eval_psi_s", "gini_function",
    "linreg_function", "mean_function", "psi_mle", "quantile_function",
    "SolveResult", "gini", "newton_solve", "weighted_quantile", "wls",
    "MembershipRealization", "WeightVector", "bigdata_weights", "horvitz_thompson",
    "integrate", "normalize", "unit_weights",
    "EstimateReport", "WeightedEstimator",
]
