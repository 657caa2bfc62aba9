"""Typed failures shared by every module.

Each class maps to one CLI exit status (see ``hiorder.cli``).
"""


class HiorderError(Exception):
    """Base class for library errors."""


class DomainError(HiorderError, ValueError):
    """Argument outside the supported domain."""


class SingularityError(DomainError):
    """Kernel evaluated at a point where it is infinite."""


class OverflowGuardError(DomainError):
    """Evaluation would overflow double precision."""


class PreconditionError(HiorderError, ValueError):
    """A documented precondition of an operation does not hold."""


class RefusalError(HiorderError):
    """Computation refused, e.g. the spectral condition fails."""


class ConditioningError(HiorderError, ArithmeticError):
    """Linear system too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class QuadratureWarning(UserWarning):
    """A quadrature finished above its requested tolerance."""
