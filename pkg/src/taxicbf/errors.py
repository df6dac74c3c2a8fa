"""Exception hierarchy shared across the package."""


class TaxiCbfError(Exception):
    """Base class for all package errors."""


class ValidationError(TaxiCbfError, ValueError):
    """Input data violates a documented invariant."""


class OutOfRangeError(ValidationError):
    """Coordinate too far from the projection origin."""


class UnreachableError(TaxiCbfError):
    """No turn-feasible route exists between the requested nodes."""


class InfeasibleFilletError(TaxiCbfError):
    """A corner cannot be rounded with the requested turning radius."""

    def __init__(self, corner, message):
        super().__init__(message)
        self.corner = corner


class QpInfeasibleError(TaxiCbfError):
    """The inequality constraints of a QP admit no solution."""

    def __init__(self, message, conflicting_rows=()):
        super().__init__(message)
        self.conflicting_rows = tuple(conflicting_rows)


class QpSolverError(TaxiCbfError):
    """The QP iteration failed to terminate (numerical breakdown)."""
