"""Band structure, threshold asymptotics and spectral counting for Iwatsuka magnetic Hamiltonians."""
from .errors import (ConfigError, DegenerateBandError, DomainError, HermiteRangeError, IwatsukaError,
                     NumericalFailure, ParameterError, SpectralPositionError, UnsupportedOrderError)
from .field import MagneticProfile, eval_a, eval_b, invert_a

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateBandError", "DomainError", "HermiteRangeError", "IwatsukaError",
    "MagneticProfile", "NumericalFailure", "ParameterError", "SpectralPositionError",
    "UnsupportedOrderError", "__version__", "eval_a", "eval_b", "invert_a",
]
