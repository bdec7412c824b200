# src/core/exceptions.py
"""
Error types raised by the library.

Everything derives from CostaError so callers can catch the whole family,
while the second base class keeps the builtin meaning (a bad dimension is
still a ValueError).
"""

from typing import Iterable, Optional


class CostaError(Exception):
    """Base class for all library errors."""


class InvalidInputError(CostaError, ValueError):
    """Argument has the wrong shape, sign or domain."""


class InvalidConfigError(CostaError, ValueError):
    """Run or problem configuration violates a precondition."""


class MetadataRequiredError(CostaError, LookupError):
    """An operation needs smoothness metadata that is marked unknown."""

    def __init__(self, missing: Iterable[str], operation: Optional[str] = None):
        self.missing = tuple(missing)
        self.operation = operation
        where = f" for {operation}" if operation else ""
        super().__init__(f"metadata required{where}: {', '.join(self.missing)}")


class SurrogateUndefinedError(CostaError, ArithmeticError):
    """Surrogate cannot be built at the requested anchor."""


class SubproblemInfeasibleError(CostaError, RuntimeError):
    """Convex subproblem has no feasible point the solver could reach."""


class RunAbortedError(CostaError, RuntimeError):
    """A run stopped early. The partial trace is attached."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
