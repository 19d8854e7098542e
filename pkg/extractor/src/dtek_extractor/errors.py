"""Extractor error types."""


class ExtractorError(Exception):
    """Base class for extractor failures."""


class SpecError(ExtractorError):
    """The extraction spec is invalid or inconsistent."""


class MissingAssetError(ExtractorError):
    """A model asset (package or checkpoint) is unavailable; names the asset."""
