"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MvjlError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatchError(MvjlError, ValueError):
    pass


class EvaluationError(MvjlError, ValueError):
    """A user map returned a non-finite value or failed to evaluate."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class ConfigurationError(MvjlError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapabilityError(MvjlError):
    """A derivative needed by an operator is missing from a test function."""

    def __init__(self, term: str, message: str | None = None):
        super().__init__(message or f"test function lacks the derivative required by term '{term}'")
        self.term = term


class SimulationError(MvjlError, ArithmeticError):
    """Non-finite state reached during time stepping."""

    def __init__(self, particle: int, step: int, message: str | None = None):
        super().__init__(message or f"non-finite state for particle {particle} at step {step}")
        self.particle = particle
        self.step = step


class DomainError(MvjlError, ValueError):
    pass
