"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to (0 success, 2 usage/config,
3 artifact mismatch, 4 numeric failure).
"""


class ToolkitError(Exception):
    exit_code = 1


class InvalidInputError(ToolkitError, ValueError):
    exit_code = 2


class ConfigError(ToolkitError, ValueError):
    exit_code = 2


class InsufficientDataError(ToolkitError, ValueError):
    exit_code = 2


class InvalidIndexError(ToolkitError, IndexError):
    exit_code = 2


class UndefinedRateError(ToolkitError, ValueError):
    exit_code = 2


class ArtifactMismatchError(ToolkitError):
    exit_code = 3


class NumericError(ToolkitError, ArithmeticError):
    exit_code = 4


class FileFormatError(ToolkitError):
    exit_code = 2


class BadMagicError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class DegenerateLossWarning(UserWarning):
    """Raised (as a warning) when a loss is undefined and reported as 0."""
