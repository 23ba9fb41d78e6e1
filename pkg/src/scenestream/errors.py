"""Exceptions and warning categories shared across the package."""


class SceneStreamError(Exception):
    """Base class for errors raised by this package."""


class StreamFormatError(SceneStreamError):
    """Malformed input file or record; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantError(SceneStreamError):
    """A domain invariant was violated (bad box, bad config, inconsistent stream)."""


class DataWarning(UserWarning):
    """Recoverable data issues: repaired ordering, degenerate clips, empty groups."""
