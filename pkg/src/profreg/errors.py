"""Exception hierarchy shared by every module."""


class ProfregError(Exception):
    """Base class for all package errors."""


class DomainError(ProfregError, ValueError):
    """A density parameter lies outside its support."""


class StructureError(ProfregError, ValueError):
    """Inputs have inconsistent shapes, names or types."""


class DataError(ProfregError, ValueError):
    """Input data could not be read or failed validation."""


class ConfigError(ProfregError, ValueError):
    """A configuration value is missing or invalid."""


class NumericalError(ProfregError, ArithmeticError):
    """Sampling produced a non-finite quantity.

    Attributes
    ----------
    iteration : int or None
        Sweep index (0-based, counting burn-in) at which the failure occurred.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
