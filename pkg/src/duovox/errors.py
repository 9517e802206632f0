"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
MissingArtifactError -> 3, NumericError -> 4.
"""


class DuovoxError(Exception):
    """Base class for package errors."""


class ConfigError(DuovoxError):
    """Invalid or inconsistent run configuration."""


class MissingArtifactError(DuovoxError):
    """A required trained artifact (codebook, checkpoint, ...) is absent."""


class NumericError(DuovoxError):
    """A numeric invariant was violated (NaN/Inf guard, zero variance, ...)."""


class VocabularyError(DuovoxError):
    """Token or word not covered by the active lexicon/vocabulary."""


class CorpusError(DuovoxError):
    """Malformed manifest or corpus constraint violation."""
