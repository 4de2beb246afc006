"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
data/input problems exit 2, training divergence exits 3.
"""


class InputError(ValueError):
    """Invalid argument to a library function (shape, index, or value)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """A data file could not be read or parsed."""


class ModelFormatError(DataError):
    """A persisted model file is corrupt or has an incompatible version."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value where one is not allowed."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, last_good_epoch=0):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
