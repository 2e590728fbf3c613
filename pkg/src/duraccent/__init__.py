"""Durational foreign-accent simulation over discrete speech units."""

from duraccent.errors import (
    DataError,
    DegenerateInputError,
    FormatError,
    InsufficientDataError,
    LabelMismatchError,
    ParseError,
    TrainingDivergedError,
    TruncationError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateInputError",
    "FormatError",
    "InsufficientDataError",
    "LabelMismatchError",
    "ParseError",
    "TrainingDivergedError",
    "TruncationError",
    "ValidationError",
]
