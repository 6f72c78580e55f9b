"""Exception hierarchy shared by every module.

Each class carries a distinct ``exit_code`` used by the command-line front end
(2 is left to argparse usage errors, 12 to unreadable files).
"""


class FunCIError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(FunCIError, ValueError):
    exit_code = 3


class DegenerateDataError(FunCIError):
    """Data carry no usable variation (e.g. a constant channel).

    ``channel`` names the offending channel when known.
    """

    exit_code = 4

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel


class NotPSDError(FunCIError):
    exit_code = 5


class NumericalError(FunCIError):
    exit_code = 6


class TuningError(FunCIError):
    """Every candidate of a GCV grid was rejected."""

    exit_code = 7


class DataFileError(FunCIError):
    """Base for ingestion failures."""

    exit_code = 8


class ParseError(DataFileError):
    exit_code = 9

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDatasetError(DataFileError):
    exit_code = 10


class ConfigError(FunCIError):
    exit_code = 11


IO_ERROR_EXIT = 12
