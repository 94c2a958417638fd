"""Exception types, each tied to a CLI exit status."""


class TrmlError(Exception):
    exit_code = 1


class ConfigError(TrmlError, ValueError):
    exit_code = 2


class DataError(TrmlError, ValueError):
    exit_code = 3


class NonFiniteError(TrmlError, FloatingPointError):
    """A computed tensor contains NaN or Inf."""

    exit_code = 4

    def __init__(self, tensor_name, message=None):
        self.tensor_name = tensor_name
        super().__init__(message or f"non-finite values in tensor '{tensor_name}'")


class DivergenceError(TrmlError):
    """Training produced a non-finite or exploding loss.

    ``last_good`` holds the parameters from before the failing step and
    ``log`` the epochs completed so far.
    """

    exit_code = 4

    def __init__(self, message, last_good=None, log=None):
        super().__init__(message)
        self.last_good = last_good
        self.log = log
