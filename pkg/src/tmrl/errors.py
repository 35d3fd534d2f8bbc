"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class TMRLError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(TMRLError, ValueError):
    exit_code = 2


class InputFormatError(TMRLError, ValueError):
    exit_code = 3


class NumericError(TMRLError, ArithmeticError):
    exit_code = 4


class TransportError(TMRLError, ConnectionError):
    exit_code = 5


class DimensionError(InputFormatError):
    """Truncation level or array shape outside the valid range."""


class DegenerateInputError(NumericError):
    """Zero-norm prefix, zero self-covariance, or similar degenerate input."""


class EmptyTemporalError(TMRLError, ValueError):
    """No tokens of a sequence intersect its temporal spans."""


class TrainingError(NumericError):
    pass


class FileFormatError(InputFormatError):
    """Bad magic number or unsupported format version."""


class TruncatedFileError(InputFormatError):
    pass


class DigestMismatchError(InputFormatError):
    pass
