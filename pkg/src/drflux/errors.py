"""Exception hierarchy shared by every module."""


class DrfluxError(Exception):
    """Base class for all package errors."""


class DomainError(DrfluxError, ValueError):
    """A point or region lies outside the evaluable part of a domain."""


class BoundaryError(DomainError):
    """A query that needs an interior point received a boundary point."""


class ParameterError(DrfluxError, ValueError):
    """An argument is outside its admissible range."""


class PreconditionError(DrfluxError, ValueError):
    """An operation was called on an input that violates its hypotheses."""


class KernelValidationError(DrfluxError, ValueError):
    """A kernel failed the admissibility checks required by flux operations."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class RefusalError(DrfluxError):
    """A mathematically meaningful refusal.

    Raised when the conservation machinery is asked to certify a field that
    does not satisfy its structural hypotheses (compressible field, flow not
    tangent to the boundary).  The CLI maps it to exit status 2.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class ScenarioError(DrfluxError, ValueError):
    """Malformed or invalid scenario file."""
