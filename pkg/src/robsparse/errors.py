"""Exception types raised by the package."""

import numpy as np


class RobSparseError(Exception):
    """Base class for all package errors."""


class DimensionError(RobSparseError, ValueError):
    """Input arrays have incompatible or insufficient dimensions."""


class AlignmentError(DimensionError):
    """The two data blocks do not describe the same observations."""


class DomainError(RobSparseError, ValueError):
    """An argument lies outside its admissible range."""


class DegenerateScaleError(RobSparseError, ValueError):
    """A robust scale estimate is zero for some variable."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"robust scale of column {column!r} is zero")


class ConvergenceError(RobSparseError, RuntimeError):
    """An iterative routine hit its iteration cap."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class SingularityError(RobSparseError, ValueError):
    """A covariance block is not positive definite."""

    def __init__(self, block, min_eigenvalue):
        self.block = block
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"covariance block {block} is singular "
            f"(smallest eigenvalue {min_eigenvalue:.3g})"
        )


class DivergenceError(RobSparseError, FloatingPointError):
    """Gradient descent produced a non-finite gradient."""

    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite gradient at iteration {iteration}")


class ParseError(RobSparseError, ValueError):
    """Malformed CSV input."""


class ConditioningError(RobSparseError, np.linalg.LinAlgError):
    """A kernel matrix stayed numerically singular after jitter escalation."""
