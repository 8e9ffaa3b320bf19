from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsde_systems import RegressionError
from fbsde_systems.regression import PolynomialBasis, RegressionStep, fit_conditional, monomial_exponents


def test_monomial_exponents():
    exps = monomial_exponents(2, 2)
    assert exps.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    assert monomial_exponents(0, 3).shape == (1, 0)
    assert len(monomial_exponents(3, 2)) == 10


def test_constant_targets():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(100), rng.normal(size=100)])
    _, pred = fit_conditional(X, np.full(100, 4.5))
    np.testing.assert_allclose(pred, 4.5, atol=1e-12)


def test_in_span_target():
    rng = np.random.default_rng(1)
    f = rng.normal(size=500)
    X = np.column_stack([np.ones(500), f])
    _, pred = fit_conditional(X, 3 * f)
    np.testing.assert_allclose(pred[:, 0], 3 * f, atol=1e-10)


def test_noisy_square_against_dense_solver():
    rng = np.random.default_rng(2)
    f = rng.normal(size=10_000)
    X = np.column_stack([np.ones_like(f), f, f**2])
    y = f**2 + rng.normal(size=f.size)
    model, _ = fit_conditional(X, y)
    oracle, *_ = np.linalg.lstsq(X, y, rcond=None)
    assert abs(model.coefficients[2, 0] - 1.0) <= 0.05
    np.testing.assert_allclose(model.coefficients[:, 0], oracle, rtol=1e-8, atol=1e-10)


def test_rank_deficient_without_ridge():
    X = np.ones((50, 2))
    with pytest.raises(RegressionError, match="ridge"):
        fit_conditional(X, np.ones(50))
    _, pred = fit_conditional(X, np.ones(50), ridge=1e-8)
    np.testing.assert_allclose(pred, 1.0, atol=1e-6)


def test_underdetermined_without_ridge():
    with pytest.raises(RegressionError):
        fit_conditional(np.random.default_rng(3).normal(size=(3, 3)), np.ones(3))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        fit_conditional(np.ones((5, 1)), np.ones(4))


def test_basis_drops_constant_variables():
    state = np.column_stack([np.full(20, 2.0), np.linspace(-1, 1, 20)])
    X, desc = PolynomialBasis(2, 2).features(state)
    assert X.shape == (20, 3)
    assert desc.startswith("1 + s1")


def test_deterministic():
    rng = np.random.default_rng(4)
    X = np.column_stack([np.ones(200), rng.normal(size=200)])
    y = rng.normal(size=(200, 2))
    a = fit_conditional(X, y)[1]
    b = fit_conditional(X, y)[1]
    np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.integers(0, 2**31))
def test_polynomial_targets_reproduced(coef, seed):
    rng = np.random.default_rng(seed)
    state = rng.normal(size=(400, 2))
    x1, x2 = state.T
    target = coef[0] + coef[1] * x1 + coef[2] * x2 + coef[3] * x1**2 + coef[4] * x1 * x2 + coef[5] * x2**2
    X, _ = PolynomialBasis(2, 2).features(state)
    pred = RegressionStep(X, 0.0).fit(target)
    np.testing.assert_allclose(pred, target, atol=1e-8 * (1 + np.abs(target).max()))
