"""Exception hierarchy.

Every error raised on bad input derives from ``ValueError`` so callers that
only care about "invalid argument" can catch that; numerical failures derive
from ``ArithmeticError``.
"""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DesignInformationError(DomainError):
    """The sampling design lacks information the estimator needs (e.g. pi_ij)."""


class UnsupportedStrategyError(DomainError):
    """The estimating function does not support the requested Jacobian strategy."""


class RankDeficiencyError(ArithmeticError):
    """The weighted Gram matrix is singular or too badly conditioned."""


class SolverError(ArithmeticError):
    """An iterative solver hit a singular Jacobian."""


class ConstructionError(ValueError):
    """A superpopulation component could not be built from its specification."""


class NumericError(ArithmeticError):
    """Quadrature or root finding failed to converge."""


class ConfigError(ValueError):
    """A configuration file failed validation."""
