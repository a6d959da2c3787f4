"""Exception types shared across the package."""


class VQELError(Exception):
    pass


class DimensionError(VQELError, ValueError):
    pass


class DomainError(VQELError, ValueError):
    pass


class ParameterError(VQELError, ValueError):
    pass


class DegenerateInputError(VQELError, ValueError):
    pass


class UsageError(VQELError, RuntimeError):
    pass


class InputError(VQELError, ValueError):
    pass


class ConfigError(VQELError, ValueError):
    pass


class NumericalError(VQELError, FloatingPointError):
    """Raised when a NaN or Inf shows up in a loss or parameter."""
