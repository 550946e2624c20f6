"""Exception hierarchy shared by every aidnet module."""


class AidNetError(Exception):
    """Base class for all errors raised by aidnet."""


class ParseError(AidNetError):
    """Scenario document is not valid JSON or has the wrong overall shape."""


class ValidationError(AidNetError):
    """A scenario field is malformed.

    Parameters
    ----------
    field : str
        Dotted path of the offending field, e.g. ``"commodities.w"``.
    reason : str
        Human readable explanation.
    """

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class DistributionError(ValidationError):
    """Transfer-time law puts non-negligible mass on negative durations."""


class DegenerateDemand(AidNetError):
    """Total importance-weighted demand is zero."""


class DomainError(AidNetError, ValueError):
    """Argument outside the mathematical domain of a function."""


class NoSolution(AidNetError):
    """An inverse solve has no root in the admissible range."""


class QuadratureError(AidNetError):
    """Adaptive quadrature did not reach its tolerance within the node budget."""


class ShapeError(AidNetError, ValueError):
    """Dispatch plan arrays do not match scenario dimensions."""


class SolverError(AidNetError):
    """Base class for optimisation failures."""


class NumericalError(SolverError):
    """Simplex pivoting stalled or became numerically unstable."""


class SizeLimit(SolverError):
    """Binary program exceeds the configured variable cap."""


class Infeasible(SolverError):
    """Hard constraints cannot be satisfied."""
