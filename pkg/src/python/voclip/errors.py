"""
Error Types
===========

Every failure raised by the library derives from :class:`VoclipError` so that
callers (and the command line front end) can separate validation problems from
programming errors.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union


class VoclipError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(VoclipError, ValueError):
    """A precondition on an argument does not hold."""


class ShapeError(InvalidArgumentError):
    """Operands have incompatible shapes."""

    def __init__(self, op: str, *shapes: Sequence[int]) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NonFiniteError(VoclipError, FloatingPointError):
    """A computation produced NaN or Inf."""


class ParseError(VoclipError, ValueError):
    """A file could not be parsed; carries the offending location."""

    def __init__(
        self, path: Union[str, Path], line: Optional[int], message: str
    ) -> None:
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigError(VoclipError, ValueError):
    """A run configuration is invalid; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class DegenerateAlignmentError(VoclipError, ArithmeticError):
    """Point sets are too degenerate to recover a rotation."""


class VerificationError(VoclipError):
    """A numerical verification (gradient check, oracle comparison) failed."""
