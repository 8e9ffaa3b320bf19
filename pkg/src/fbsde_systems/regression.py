"""Least-squares conditional expectations on polynomial features."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import RegressionError

# reciprocal condition number below which an unregularised fit is refused
_RCOND = 1e-13


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """All exponent vectors of total degree ``<= degree``, constant first."""
    if dim == 0:
        return np.zeros((1, 0), dtype=np.int64)
    out = [e for p in range(degree + 1) for e in _exponents_of_degree(dim, p)]
    return np.array(out, dtype=np.int64)


def _exponents_of_degree(dim: int, p: int):
    for combo in itertools.combinations_with_replacement(range(dim), p):
        e = [0] * dim
        for i in combo:
            e[i] += 1
        yield tuple(e)


@dataclass(frozen=True)
class PolynomialBasis:
    """Monomials of standardised state variables up to a total degree.

    Each variable is centred and scaled by its cross-path standard deviation
    at the time step; variables with zero spread are dropped so a
    deterministic state yields an intercept-only basis.
    """

    dim: int
    degree: int

    def features(self, state: np.ndarray) -> tuple[np.ndarray, str]:
        state = np.asarray(state, dtype=np.float64).reshape(state.shape[0], -1)
        mean = state.mean(axis=0)
        sd = state.std(axis=0)
        live = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
        z = (state[:, live] - mean[live]) / sd[live]
        exps = monomial_exponents(z.shape[1], self.degree)
        X = np.ones((state.shape[0], exps.shape[0]))
        for j, e in enumerate(exps[1:], start=1):
            for i in np.nonzero(e)[0]:
                X[:, j] *= z[:, i] ** e[i]
        names = np.flatnonzero(live)
        desc = " + ".join(
            "1" if not e.any() else "*".join(f"s{names[i]}^{e[i]}" if e[i] > 1 else f"s{names[i]}" for i in np.nonzero(e)[0])
            for e in exps
        )
        return X, desc


@dataclass
class RegressionStep:
    """Factorised normal equations for one design matrix; reusable across targets."""

    X: np.ndarray
    ridge: float
    description: str = ""
    _factor: tuple | None = None

    def __post_init__(self) -> None:
        M, F = self.X.shape
        if self.ridge < 0:
            raise RegressionError(f"ridge must be >= 0, got {self.ridge}")
        if self.ridge == 0 and M <= F:
            raise RegressionError(f"{M} samples for {F} features and ridge=0; use ridge > 0 or more paths")
        G = self.X.T @ self.X / M
        if self.ridge:
            # the intercept is not penalised
            pen = np.full(F, self.ridge)
            if np.allclose(self.X[:, 0], 1.0):
                pen[0] = 0.0
            G[np.diag_indices(F)] += pen
        try:
            self._factor = linalg.cho_factor(G, lower=True, check_finite=True)
        except linalg.LinAlgError:
            raise RegressionError(
                "normal equations are not positive definite (rank-deficient features); use ridge > 0"
            ) from None
        if self.ridge == 0:
            diag = np.diag(self._factor[0])
            if diag.min() ** 2 < _RCOND * diag.max() ** 2:
                raise RegressionError("normal equations are numerically rank-deficient; use ridge > 0")

    def coefficients(self, targets: np.ndarray) -> np.ndarray:
        Y = targets.reshape(targets.shape[0], -1)
        return linalg.cho_solve(self._factor, self.X.T @ Y / Y.shape[0])

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values with the same shape as ``targets``."""
        return (self.X @ self.coefficients(targets)).reshape(targets.shape)


@dataclass(frozen=True)
class RegressionModel:
    """One fitted step: feature description and coefficient matrix (features x targets)."""

    description: str
    coefficients: np.ndarray


def fit_conditional(features: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> tuple[RegressionModel, np.ndarray]:
    """Least-squares fit of ``targets`` (M x q) on ``features`` (M x F).

    Returns the model and the per-sample predictions.  Raises
    :class:`RegressionError` when ``ridge == 0`` and the fit is underdetermined.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise ValueError(f"features {X.shape} and targets {Y.shape} are incompatible")
    step = RegressionStep(X, float(ridge))
    coef = step.coefficients(Y)
    return RegressionModel(f"{X.shape[1]} features", coef), X @ coef
