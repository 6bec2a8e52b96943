"""Exception types shared across the package."""


class WealthmapError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(WealthmapError):
    """A value violates an operation's precondition (non-finite, out of range, wrong arity)."""


class SchemaError(WealthmapError):
    """A tabular input does not conform to its declared schema."""


class DegenerateInputError(WealthmapError):
    """Input is structurally valid but carries no usable signal (all-constant matrix, empty cluster set)."""


class UndefinedMetricError(WealthmapError):
    """A metric is undefined for the given data (zero variance)."""
