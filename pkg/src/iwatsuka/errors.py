"""Exception hierarchy shared by the numerical modules and the CLI."""
from __future__ import annotations


class IwatsukaError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(IwatsukaError, ValueError):
    """Invalid profile, potential or experiment configuration."""


class UnsupportedOrderError(IwatsukaError, ValueError):
    """Requested derivative order is above what the profile provides."""


class HermiteRangeError(IwatsukaError, ValueError):
    """Hermite evaluation requested outside the stable (n, t) range."""


class DomainError(IwatsukaError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ParameterError(IwatsukaError, ValueError):
    """Tuning parameters outside their admissible window."""


class DegenerateBandError(IwatsukaError, ValueError):
    """Band function is flat, so it has no inverse."""


class SpectralPositionError(IwatsukaError, ValueError):
    """Spectral parameter does not lie in a gap of the unperturbed spectrum."""


class NumericalFailure(IwatsukaError, RuntimeError):
    """An iterative method failed to converge or to certify its result."""


class GridFailure(NumericalFailure):
    """Fiber grid could not be widened enough to contain the turning points."""
