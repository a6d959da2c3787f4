"""Emergent discrete communication through vector-quantized self-play."""

from .config import ExperimentConfig, Method, Variant
from .errors import (ConfigError, DegenerateInputError, DimensionError, DomainError, InputError,
                     NumericalError, ParameterError, UsageError, VQELError)
from .runner import RunResult, run

__all__ = [
    "ConfigError", "DegenerateInputError", "DimensionError", "DomainError", "ExperimentConfig",
    "InputError", "Method", "NumericalError", "ParameterError", "RunResult", "UsageError",
    "VQELError", "Variant", "run",
]
__version__ = "0.1.0"
