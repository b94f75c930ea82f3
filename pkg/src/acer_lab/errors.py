"""Exception types shared across the package."""


class AcerLabError(Exception):
    pass


class ConfigurationError(AcerLabError, ValueError):
    """Inconsistent shapes, modes or hyperparameters."""


class InvalidMaskError(AcerLabError, ValueError):
    """A mask leaves no valid action, or two masks disagree on support."""


class NumericError(AcerLabError, ArithmeticError):
    """A NaN or infinity reached a place where it must not."""


class ProtocolError(AcerLabError, RuntimeError):
    """An object was used out of order, e.g. stepping a finished dialogue."""


class StoredDataError(AcerLabError, ValueError):
    """Replay data violates its invariants (e.g. a zero behaviour probability)."""


class InputError(AcerLabError, ValueError):
    pass
