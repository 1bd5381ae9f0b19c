"""Error types raised across the package.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class GlatError(Exception):
    """Base class for all package errors."""

    exit_code: int = 1


class ConfigError(GlatError, ValueError):
    """Malformed or invalid configuration file."""

    exit_code = 3


class MissingInputError(GlatError, FileNotFoundError):
    """A file or directory required by a command does not exist."""

    exit_code = 4


class DimensionMismatchError(GlatError, ValueError):
    """Array or checkpoint shapes disagree with the configuration."""

    exit_code = 5


class EmbeddingFormatError(GlatError, ValueError):
    """Malformed embedding table, dataset manifest or checkpoint file."""

    exit_code = 6

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)


class GridError(GlatError, ValueError):
    """Patch grid geometry is invalid (e.g. two patches on one cell)."""

    exit_code = 6


class DivergenceError(GlatError, ArithmeticError):
    """Training produced a non-finite loss."""

    exit_code = 7

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}")


class NonFiniteGradientError(GlatError, ArithmeticError):
    """Backward pass or optimizer produced a non-finite value."""

    exit_code = 7

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Non-finite gradient for parameter '{name}'")
