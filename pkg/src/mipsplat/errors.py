"""Exception hierarchy shared by all mipsplat modules."""

from __future__ import annotations


class MipSplatError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(MipSplatError, ValueError):
    """A primitive or camera parameter is non-finite or out of its domain."""


class NumericDegeneracyError(MipSplatError, ArithmeticError):
    """A matrix that must be inverted is singular even after regularization."""


class BehindCameraError(MipSplatError, ValueError):
    """A point lies at or behind the near plane."""


class InvalidDepthError(MipSplatError, ValueError):
    pass


class InvalidRateError(MipSplatError, ValueError):
    pass


class DimensionMismatchError(MipSplatError, ValueError):
    pass


class NonFiniteError(MipSplatError, ArithmeticError):
    """Non-finite values were found in primitives or gradients.

    Attributes:
        indices: offending primitive indices.
        field: name of the offending parameter, when known.
    """

    def __init__(self, message: str, indices=(), field: str | None = None):
        super().__init__(message)
        self.indices = list(int(i) for i in indices)
        self.field = field


class DivergenceError(MipSplatError, ArithmeticError):
    """Training produced a NaN loss. ``trace`` holds the records up to the failure."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ParseError(MipSplatError, ValueError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(MipSplatError, ValueError):
    """Structured input violates its schema. ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
