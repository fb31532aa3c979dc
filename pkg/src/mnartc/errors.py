"""Exception types raised by the library.

Everything derives from MnartcError so callers can catch a single base.
Plain ValueError/IndexError are still used for generic argument problems
(bad sizes, out-of-range indices); the classes here mark failure modes a
caller may want to handle individually.
"""


class MnartcError(Exception):
    """Base class for all library-specific errors."""


class DimensionError(MnartcError, ValueError):
    """Shapes, ranks, or index grids do not agree."""


class DegenerateFactorError(MnartcError, RuntimeError):
    """A factor column collapsed to (numerically) zero length."""


class SupportError(MnartcError, ValueError):
    """An observed value lies outside the family's support."""


class NaturalParameterOverflowError(MnartcError, FloatingPointError):
    """A Poisson natural parameter exceeded the configured cap."""


class ProbabilityRangeError(MnartcError, ValueError):
    """A probability left the open interval (0, 1)."""


class NoDataError(MnartcError, ValueError):
    """An operation that needs observed entries received none."""


class NumericalFailureError(MnartcError, RuntimeError):
    """An iterative routine produced non-finite values or failed to converge."""


class SeparationError(MnartcError, RuntimeError):
    """Logistic regression diverged: the classes are (quasi-)separable."""


class DegenerateResponseError(MnartcError, ValueError):
    """Logistic regression received a single-class response."""


class CollinearDesignError(MnartcError, ValueError):
    """Logistic regression received a constant covariate."""


class MetricError(MnartcError, ValueError):
    """A metric is undefined for the given inputs (empty set, zero norm, one class)."""


class ParseError(MnartcError, ValueError):
    """A text input could not be parsed; the message carries the line number."""


class DuplicateEntryError(ParseError):
    """The same index triple appeared more than once in a coordinate file."""


class SchemaVersionError(MnartcError, ValueError):
    """A serialized model file has an unsupported schema version."""
