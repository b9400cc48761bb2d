"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""


class DegenerateEstimateError(RuntimeError):
    """Every sample received zero utility; the gradient estimate is undefined."""


class InfeasibleStepError(RuntimeError):
    """A proximal step left the feasible parameter set (e.g. non-SPD covariance)."""
