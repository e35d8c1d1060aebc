"""Exception hierarchy shared across the package."""


class HBRVMError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HBRVMError, ValueError):
    """Inputs violate an operation's preconditions."""


class KernelConstructionError(HBRVMError):
    """A kernel entry could not be represented as a finite double."""


class NumericalError(HBRVMError):
    """A numerical routine failed (factorization, quadratic form, slice step).

    ``context`` carries diagnostics useful for reproducing the failure.
    """

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class OracleRangeError(HBRVMError):
    """Grid oracle found too much posterior mass on the edge of its grid."""


class InsufficientDataError(HBRVMError):
    """Too few usable points for a fit."""


class ConfigError(HBRVMError):
    """Malformed or unknown configuration."""
