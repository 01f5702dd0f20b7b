"""Exception types raised across the toolkit."""


class SafeMpcError(Exception):
    """Base class for toolkit errors."""


class DimensionError(SafeMpcError, ValueError):
    """An array argument has the wrong shape."""


class SingularStateError(SafeMpcError, ValueError):
    """The vehicle model was evaluated where it is undefined (vx <= 0 or 1 - kappa*e_y = 0)."""


class IdentifiabilityError(SafeMpcError, ValueError):
    """Regression data does not determine the linear model uniquely."""

    def __init__(self, message, deficient_directions=None):
        super().__init__(message)
        self.deficient_directions = deficient_directions


class ConfigError(SafeMpcError, ValueError):
    """A scenario configuration failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalFailure(SafeMpcError, RuntimeError):
    """A linear system inside the solver was singular or produced non-finite values."""
