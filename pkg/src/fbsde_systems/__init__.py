"""Monte Carlo solver for coupled quasilinear parabolic systems via forward-backward SDEs."""

from __future__ import annotations

from .catalog import NAMES as CATALOG_NAMES
from .catalog import catalog, manufactured_quasilinear
from .declarative import build_problem
from .errors import (
    CatalogError,
    CoefficientError,
    ConfigError,
    DimensionError,
    ExpressionError,
    FBSDEError,
    ManufactureError,
    RegressionError,
    SimulationError,
)
from .problem import (
    ExactSolution,
    LipschitzBudget,
    ManufacturedProblem,
    ProblemSpec,
    derive_B,
    gradient_load,
    manufacture,
    pde_residual,
)
from .validation import ValidationReport, validate

__all__ = [
    "CATALOG_NAMES", "CatalogError", "CoefficientError", "ConfigError", "DimensionError",
    "ExactSolution", "ExpressionError", "FBSDEError", "LipschitzBudget", "ManufactureError",
    "ManufacturedProblem", "ProblemSpec", "RegressionError", "SimulationError",
    "ValidationReport", "build_problem", "catalog", "derive_B", "gradient_load",
    "manufacture", "manufactured_quasilinear", "pde_residual", "validate",
]
