"""Exception hierarchy shared by every mfcontrol module.

Library code raises these; only the command-line front end turns them into
exit codes.
"""

from typing import Any


class MfControlError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(MfControlError, ValueError):
    """Arguments violate a documented precondition."""


class RangeError(MfControlError, ArithmeticError):
    """A result left the representable floating-point range."""


class NotPSDError(MfControlError, ValueError):
    """A matrix expected to be positive semidefinite is genuinely indefinite."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NumericError(MfControlError, ArithmeticError):
    """Quadrature or ODE integration failed to reach its accuracy contract."""


class NotReducibleError(MfControlError):
    """Range(C1_0) is not contained in Range(D1); no feedback M removes C1_0."""

    def __init__(self, message: str, witness_column: int, column: Any):
        super().__init__(message)
        self.witness_column = witness_column
        self.column = column


class InfeasibleMeanError(MfControlError):
    """The requested terminal mean cannot be reached."""


class InfeasibleVarianceError(MfControlError):
    """The requested variance lies outside the reachable range."""


class SynthesisUnavailableError(MfControlError):
    """A constructive control needs a hypothesis the system does not satisfy."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class UnsupportedDegreeError(MfControlError):
    """Hermite targets are limited to degree 6."""


class CapacityError(MfControlError):
    """A path-shaped array would exceed the configured memory guard."""


class ConfigError(MfControlError):
    """A run configuration document could not be parsed or validated."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
