"""Exception hierarchy. The CLI maps each class to a fixed exit code."""


class GlcError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class CheckFailure(GlcError):
    """A verification check (grad check, parity assertion, ...) failed."""

    exit_code = 1


class ConfigError(GlcError):
    """Invalid configuration, hyperparameter, or shape-contract violation at setup."""

    exit_code = 2


class ShapeError(GlcError, ValueError):
    """Tensor operands with incompatible shapes or axes."""

    exit_code = 2


class UsageError(GlcError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""

    exit_code = 2


class DatasetError(GlcError):
    """Problems reading or validating an on-disk dataset."""

    exit_code = 3


class DatasetVersionError(DatasetError):
    pass


class DatasetChecksumError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    pass


class NumericError(GlcError):
    """Non-finite values where finite ones are required (e.g. training loss)."""

    exit_code = 4
