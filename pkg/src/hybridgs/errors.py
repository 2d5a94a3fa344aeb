"""Exception types raised across the package."""


class HybridGSError(Exception):
    """Base class for package errors."""


class DegenerateTemporalError(HybridGSError, ValueError):
    """Temporal variance too small to condition on."""


class DegenerateRotationError(HybridGSError, ValueError):
    """Spatial block of a 4D rotation has collapsed."""


class FormatError(HybridGSError):
    """Malformed dataset directory or file."""


class IntegrityError(FormatError):
    """Checkpoint section failed its CRC or is truncated."""

    def __init__(self, message, section=None):
        super().__init__(message)
        self.section = section


class UnsupportedVersionError(FormatError):
    """Checkpoint written by an unknown format version."""


class NumericAbort(HybridGSError):
    """Training produced a non-finite loss."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
