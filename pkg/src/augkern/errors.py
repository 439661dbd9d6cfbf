"""Exception types raised across the package."""


class AugkernError(Exception):
    """Base class for all package errors."""


class ValidationError(AugkernError, ValueError):
    """An input violates a documented precondition."""


class DetailedBalanceError(AugkernError):
    """An augmentation matrix is not reversible with respect to ``pi0``.

    ``worst`` holds ``(augmentation_index, u, v, violation)`` for the
    largest offending pair.
    """

    def __init__(self, message, worst):
        super().__init__(message)
        self.worst = worst


class SurjectivityError(AugkernError):
    """Some states cannot be reached from the dataset."""

    def __init__(self, message, unreachable):
        super().__init__(message)
        self.unreachable = list(unreachable)


class SeriesDivergenceError(AugkernError):
    """The power series for a kernel update does not converge."""


class DivergenceError(AugkernError):
    """Gradient descent blew up."""


class ConfigError(AugkernError):
    """A CLI config file is malformed. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
