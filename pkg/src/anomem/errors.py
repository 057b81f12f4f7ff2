"""Exception types raised across the package.

Every error the library raises deliberately derives from AnomemError so
callers (and the CLI) can separate contract violations in user-supplied
data from genuine bugs.
"""

from __future__ import annotations


class AnomemError(Exception):
    """Base class for all deliberate errors raised by this package."""


class ZeroVectorError(AnomemError):
    """A vector with (near-)zero norm where a direction is required."""


class DimensionMismatchError(AnomemError):
    """Operands whose dimensions must agree do not."""


class ScaleMismatchError(AnomemError):
    """Bundle, bank, or config disagree on the window scale list."""


class FormatError(AnomemError):
    """A file is not structurally valid for its declared format."""


class IntegrityError(AnomemError):
    """A file parses but its contents contradict its own declarations."""


class NormalizationError(AnomemError):
    """Stored embedding data cannot be normalized (zero vector)."""


class StorageError(AnomemError):
    """Reading or writing artifact files failed at the I/O level."""


class GeometryError(AnomemError):
    """Window layout does not fit the declared image dimensions."""


class EmptyBankError(AnomemError):
    """A reference bank ended up with no entries at some scale."""


class NoAnomalousPixelsError(AnomemError):
    """Anomalous bank requested but every provided mask is empty."""


class EmptyScaleError(AnomemError):
    """A search was issued against a scale with no entries."""


class DegenerateDistributionError(AnomemError):
    """Weight sampling produced only all-zero vectors."""


class DegenerateValidationError(AnomemError):
    """Validation set holds a single class; AUROC is undefined."""


class DegenerateLabelsError(AnomemError):
    """Label vector holds a single class; AUROC is undefined."""


class InsufficientDataError(AnomemError):
    """A class lacks the samples required to form an evaluation task."""
