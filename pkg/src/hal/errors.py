"""Exception hierarchy shared by every hal module."""


class HalError(Exception):
    """Base class for all library errors."""


class DimensionError(HalError, ValueError):
    """Shapes or extents are incompatible."""


class DataError(HalError, ValueError):
    """Values are outside their documented domain (labels, one-hot rows...)."""


class FormatError(HalError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class ConfigError(HalError, ValueError):
    """A run or matrix configuration is invalid."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class StateError(HalError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class NonFiniteError(HalError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class DivergenceError(NonFiniteError):
    """Training loss became non-finite."""

    def __init__(self, epoch, batch, lr):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (lr={lr:.6g})")
        self.epoch = epoch
        self.batch = batch
        self.lr = lr
