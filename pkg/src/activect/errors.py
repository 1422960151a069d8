"""Exception types raised across the package."""


class ActiveCTError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ActiveCTError, ValueError):
    """Inconsistent geometry, shapes or configuration values."""


class BoundsError(ActiveCTError, IndexError):
    """An angle or detector index outside its valid range."""


class FormatError(ActiveCTError, ValueError):
    """Malformed file contents.

    Parameters
    ----------
    message : str
        What went wrong.
    offset : int
        Byte offset in the file at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericalError(ActiveCTError, ArithmeticError):
    """NaN or otherwise non-finite values produced during computation."""


class ExhaustionError(ActiveCTError):
    """No unsampled angle is left to select."""


class DivergenceError(NumericalError):
    """Training loss exceeded the divergence threshold."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
