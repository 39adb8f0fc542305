"""Exception hierarchy shared across the package."""


class BscahnError(Exception):
    """Base class for all package-specific failures."""


class MeshQualityError(BscahnError):
    """A triangulation violates orientation/area/conformity requirements."""


class RefinementLimitError(BscahnError):
    """Requested refinement level exceeds the configured maximum."""


class FormatError(BscahnError):
    """A serialized mesh/field/table file is malformed."""


class DegenerateParameterError(BscahnError):
    """Model parameters make the problem ill-posed (e.g. alpha*beta*|Omega| + |Gamma| = 0)."""


class AssumptionViolationError(BscahnError):
    """A structural assumption (mobility bounds, convexity floor, domination) fails."""


class SingularityError(BscahnError):
    """Evaluation of a singular potential derivative at/beyond its blow-up points."""


class SingularEnergyError(BscahnError):
    """Free energy requested for a state touching the pure phases +-1."""


class CompatibilityError(BscahnError):
    """Right-hand side or initial datum violates a mean/solvability condition."""


class SolverError(BscahnError):
    """A linear solve failed or returned an unacceptable residual."""


class StepFailureError(BscahnError):
    """Newton did not converge within its iteration budget.

    Carries the last residual norm so callers can decide on dt retries.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(BscahnError):
    """Scenario configuration is malformed; message names the offending key."""
