"""Exception and warning types shared across the package."""


class EsregError(Exception):
    """Base class for all esreg errors."""


class DataValidationError(EsregError):
    """Raised when input data violates a structural requirement
    (dimension mismatch, non-finite entries, degenerate columns,
    missing response, malformed CSV)."""


class SolverError(EsregError):
    """Raised for unusable solver inputs.  Non-convergence is *not* an
    error: solvers report ``converged=False`` and leave the decision to
    the caller."""


class RankDeficiencyError(EsregError):
    """Raised when an unpenalized refit hits a singular Gram matrix."""


class RcvCardinalityError(EsregError):
    """Raised when a refitted cross-validation half-sample is too small
    relative to the selected supports.  Advice: increase n or use a
    stronger penalty."""


class DegenerateProjectionError(EsregError):
    """Raised when the projection residual is numerically orthogonal to
    the target column, so the debiasing denominator vanishes."""


class VarianceDegenerateError(EsregError):
    """Raised when a variance estimate required to be positive is not."""


class DegenerateTailWarning(UserWarning):
    """Emitted when no observation falls below the fitted quantile plane,
    so the adjusted responses carry no tail information."""
