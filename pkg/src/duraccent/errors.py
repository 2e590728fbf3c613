"""Exception taxonomy shared by every module.

All errors raised for malformed or unusable data derive from ``DataError`` so
callers (notably the CLI) can map them to exit codes in one place.
"""


class DataError(Exception):
    """Base class for every expected, data-dependent failure."""


class FormatError(DataError):
    """Unknown magic tag, unsupported version, or malformed layout."""


class TruncationError(FormatError):
    """A binary stream ended before its declared payload."""


class ParseError(DataError):
    """A text artifact contains a token that cannot be parsed."""


class ValidationError(DataError):
    """A value violates a documented invariant or precondition."""


class InsufficientDataError(DataError):
    """Not enough data points for the requested computation."""


class DegenerateInputError(DataError):
    """Input is well-formed but mathematically degenerate (e.g. zero variance)."""


class LabelMismatchError(DataError):
    """Two phoneme alignments do not share the same label sequence."""


class TrainingDivergedError(DataError):
    """Optimization produced a non-finite loss."""
