"""Exception types shared across the package."""


class ImplicitBoxError(Exception):
    """Base class for all package-specific errors."""


class OutsidePointError(ImplicitBoxError):
    """A point expected inside a box lies outside it."""


class EmptyInputError(ImplicitBoxError):
    """An operation requiring at least one element received none."""


class PlacementFailureError(ImplicitBoxError):
    """Non-overlapping object placement failed within the retry budget."""


class EmptyCloudError(ImplicitBoxError):
    """An operation requiring a nonempty point cloud received an empty one."""


class ShapeMismatchError(ImplicitBoxError):
    """Array shapes are inconsistent with the declared layer or feature widths."""


class NoInsidePointsError(ImplicitBoxError):
    """No sampled point exceeded the inside/outside threshold."""


class DivergenceError(ImplicitBoxError):
    """Training produced a non-finite loss."""


class ParseError(ImplicitBoxError):
    """Structured parse failure with source position."""

    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


class TruncatedFileError(ImplicitBoxError):
    """Binary input ends mid-record."""


class SchemaError(ImplicitBoxError):
    """A JSON document violates the scene schema."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class ConfigError(ImplicitBoxError):
    """A run configuration value violates a precondition."""
