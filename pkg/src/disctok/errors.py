"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit with 2,
data and format problems with 3.
"""


class DisctokError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DisctokError):
    """A value violates a documented invariant (non-finite data, bad runs, ...)."""


class FormatError(DisctokError):
    """A file does not look like the expected binary format."""


class CorruptionError(DisctokError):
    """A file has the right framing but inconsistent or truncated contents."""


class SchemaError(DisctokError):
    """Shapes, dimensions or lengths of otherwise valid inputs do not line up."""


class ConfigurationError(DisctokError):
    """A parameter or parameter combination is invalid."""


class CapacityError(DisctokError):
    """Not enough data to satisfy the request."""


class TokenRangeError(DisctokError):
    """A token index falls outside its declared vocabulary."""


class UndefinedMetricError(DisctokError):
    """The requested metric is undefined on this input."""


class DegenerateCodebookWarning(UserWarning):
    """Training data had fewer distinct points than requested centroids."""
