"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every failure a user can
trigger should surface as one of the classes below.
"""


class DgdaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(DgdaError, ValueError):
    """Operand shapes are incompatible for an operation."""


class DomainError(DgdaError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigError(DgdaError, ValueError):
    """A configuration is malformed or infeasible."""


class DataValidationError(DgdaError, ValueError):
    """A dataset file or in-memory graph violates its invariants."""

    exit_code = 2


class NumericError(DgdaError, ArithmeticError):
    """A computation produced a non-finite value or breached a tolerance."""

    exit_code = 3


class CheckpointError(DgdaError):
    """A checkpoint file is missing, corrupt or of an unsupported version."""

    exit_code = 2
