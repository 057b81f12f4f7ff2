"""Error taxonomy for the extractor.

Every error raised on purpose derives from ExtractorError so the CLI can
map deliberate failures to exit code 2 and leave genuine bugs to surface
as tracebacks.
"""

from __future__ import annotations

__all__ = [
    "ExtractorError",
    "EncoderUnavailable",
    "UnsupportedResolution",
    "EmptyTemplate",
    "LayoutError",
]


class ExtractorError(Exception):
    """Base class for all deliberate extractor failures."""


class EncoderUnavailable(ExtractorError):
    """A requested encoder backend cannot run in this environment."""


class UnsupportedResolution(ExtractorError):
    """Input resolution is incompatible with the patch or window grid."""


class EmptyTemplate(ExtractorError):
    """A prompt template set produced no prompts for a state."""


class LayoutError(ExtractorError):
    """An on-disk dataset does not match the expected directory layout."""
