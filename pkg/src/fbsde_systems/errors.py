"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class FBSDEError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FBSDEError, ValueError):
    """An operand has a shape inconsistent with the problem dimensions."""


class CoefficientError(FBSDEError):
    """A coefficient function failed or returned non-finite values."""


class CatalogError(FBSDEError, KeyError):
    """Unknown catalog entry."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class ManufactureError(FBSDEError, ValueError):
    """A manufactured problem could not be built."""


class SimulationError(FBSDEError):
    """Forward simulation hit a singular multiplicative step factor."""


class RegressionError(FBSDEError):
    """Least-squares normal equations could not be solved."""


class ConfigError(FBSDEError, ValueError):
    """Invalid solver or run configuration."""


class ExpressionError(FBSDEError, ValueError):
    """A declarative expression uses a construct outside the whitelist."""
