"""Domain adaptation under missingness shift: simulation, imputation and importance weighting."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("mnarshift")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (  # noqa: E402
    CalibrationError,
    ConfigError,
    ConvergenceError,
    ImputationError,
    MnarShiftError,
    SamplerError,
    SchemaError,
    SeparationError,
    WeightError,
)

__all__ = [
    "CalibrationError",
    "ConfigError",
    "ConvergenceError",
    "ImputationError",
    "MnarShiftError",
    "SamplerError",
    "SchemaError",
    "SeparationError",
    "WeightError",
    "__version__",
]
