"""Exception types shared across the package.

Argument/precondition violations raise plain ``ValueError``; everything
else gets a dedicated class so callers (and the CLI) can map failures to
exit codes.
"""


class PaintSRError(Exception):
    """Base class for package-specific failures."""


class FormatError(PaintSRError):
    """A file exists but is not in a supported/expected format."""


class CorruptionError(PaintSRError):
    """A persisted artifact failed its integrity check (checksum, truncation)."""


class ConfigurationError(PaintSRError):
    """Inconsistent or missing configuration (wrong arch, absent weight file, ...)."""


class TrainingError(PaintSRError):
    """Optimization failed (non-finite loss, divergence)."""


class NumericError(PaintSRError):
    """A numeric quantity that must be finite was not."""
