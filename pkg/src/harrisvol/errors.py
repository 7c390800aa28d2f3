"""Exception types shared across the package."""


class HarrisvolError(Exception):
    """Base class for all package errors."""


class DomainError(HarrisvolError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(HarrisvolError, ValueError):
    """Inputs violate a structural precondition (shapes, ordering, ranges)."""


class OverflowRangeError(HarrisvolError, OverflowError):
    """A result exceeds the representable double range; use the log-scale variant."""


class QuadratureError(HarrisvolError, RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance.

    Carries the best available estimate in ``estimate`` and the reported
    error bound in ``error_estimate``.
    """

    def __init__(self, message, estimate, error_estimate):
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate


class ArmsInitError(HarrisvolError, RuntimeError):
    """ARMS could not build a usable envelope from the initial abscissae."""


class NumericalError(HarrisvolError, RuntimeError):
    """A numerical routine failed in a way that invalidates its result."""


class StageError(HarrisvolError, RuntimeError):
    """A pipeline stage failed; ``stage`` names the failing step."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
