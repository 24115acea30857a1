"""Exception hierarchy.

Configuration errors cover structurally invalid requests (shape or spec
mismatches caught before any arithmetic); usage errors cover misuse of an
otherwise valid object; numerical errors signal NaN/Inf aborts and map to
CLI exit code 2.
"""


class SgnetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SgnetError):
    """Invalid shapes, specs, or config values."""


class UsageError(SgnetError):
    """Valid objects used incorrectly (e.g. backward on a non-scalar)."""


class ParseError(SgnetError):
    """Malformed config or annotation text; message names the line."""


class DataError(SgnetError):
    """Corrupt or inconsistent on-disk data (SGT1 files, datasets)."""


class CheckpointMismatchError(SgnetError):
    """Checkpoint does not structurally match the network being loaded."""


class NumericalError(SgnetError):
    """Non-finite values produced during training; aborts the run."""
