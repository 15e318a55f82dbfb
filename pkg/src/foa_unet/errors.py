"""Exception hierarchy shared by every module of the package."""


class FoaError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(FoaError, ValueError):
    """Array shapes or channel counts are inconsistent."""


class SignalError(FoaError, ValueError):
    """An input signal is unusable (too short, silent, non-finite)."""


class ConfigError(FoaError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class NumericalError(FoaError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class IllConditionedError(NumericalError):
    def __init__(self, message, condition):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, message, pivot, index=None):
        where = "" if index is None else f" at batch index {index}"
        super().__init__(f"{message}: pivot {pivot} is not positive{where}")
        self.pivot = pivot
        self.index = index


class DataError(FoaError, ValueError):
    """A file or dataset is malformed, truncated or fails its checksum."""
