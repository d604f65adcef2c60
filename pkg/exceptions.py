"""
Exception hierarchy for the factor collapse toolkit.
Every error carries the CLI exit code it maps to.
"""

from typing import Optional


class FactorCollapseError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class InvalidInputError(FactorCollapseError, ValueError):
    """Input rejected before any computation (bad shape, bad value, bad file content)"""
    exit_code = 2


class NumericFailureError(FactorCollapseError, ArithmeticError):
    """A numerical procedure failed or produced inconsistent answers"""
    exit_code = 3

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class SingularMatrixError(NumericFailureError):
    """Matrix is numerically singular at the requested tolerance"""

    def __init__(self, message: str, condition: float):
        super().__init__(message, residual=condition)
        self.condition = condition


class NoConvergenceError(NumericFailureError):
    """Iteration budget exhausted before successive iterates agreed"""


class NoEquilibriumError(NumericFailureError):
    """Covariance recursion did not settle within the wave budget"""

    def __init__(self, message: str, last_change: float):
        super().__init__(message, residual=last_change)
        self.last_change = last_change


class ReportIOError(FactorCollapseError, OSError):
    """Reading or writing a file failed"""
    exit_code = 4

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
