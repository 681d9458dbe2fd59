"""Exception hierarchy shared by the library and the CLI."""


class SedError(Exception):
    """Base class for failures the CLI maps to an exit code."""

    exit_code = 1


class ConfigError(SedError, ValueError):
    """Unknown key, bad value or inconsistent run configuration."""

    exit_code = 2


class DataError(SedError, ValueError):
    """Missing, malformed or corrupted files on disk."""

    exit_code = 3


class NumericalError(SedError, ArithmeticError):
    """Non-finite loss or gradient during training."""

    exit_code = 4


class TapeConsumedError(RuntimeError):
    """A gradient tape was asked to run backward a second time."""
