"""Exception hierarchy shared by all entmap modules."""

from __future__ import annotations


class EntmapError(Exception):
    """Base class for every error raised by entmap."""


class InvalidArgumentError(EntmapError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(InvalidArgumentError):
    """A data file could not be parsed.

    Attributes:
        line: 1-based line number of the offending row, if known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalFailureError(EntmapError, ArithmeticError):
    """A computation produced non-finite or runaway values."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class InvalidStateError(EntmapError, RuntimeError):
    """An object is not in a state where the requested quantity is defined."""


class ResourceError(EntmapError, MemoryError):
    """A request would exceed a configured allocation cap."""
