from __future__ import annotations

import io

import numpy as np
import pytest
from scipy.linalg import expm

from fbsde_systems import SimulationError, catalog
from fbsde_systems.bsde import SolverConfig
from fbsde_systems.forward import (
    TimeGrid,
    dump_paths,
    gamma_compose_check,
    gamma_inverse_check,
    gamma_inverse_euler,
    load_paths,
    simulate_forward,
    step_product,
)

from .conftest import constant_spec


def _random_coupling(d1, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, (d1, d1)), rng.uniform(-scale, scale, (1, d1, d1))


def test_time_grid():
    grid = TimeGrid(0.25, 1.0, 3)
    assert grid.dt == 0.25
    np.testing.assert_array_equal(grid.points, [0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


def test_frozen_diffusion():
    spec = constant_spec(A=np.zeros((1, 1)))
    paths = simulate_forward(spec, 0.0, [0.7], SolverConfig(N=10, M=50))
    assert np.all(paths.xi == 0.7)


def test_trivial_functional():
    paths = simulate_forward(catalog("heat-1d"), 0.0, [0.0], SolverConfig(N=10, M=50))
    assert np.all(paths.gamma == 1.0) and np.all(paths.gamma_inv == 1.0)


def test_rotation_functional_matches_matrix_exponential():
    spec = catalog("rotation-coupling")
    paths = simulate_forward(spec, 0.0, [0.0], SolverConfig(N=200, M=20))
    theta = np.pi / 2
    oracle = expm(np.array([[0.0, 1.0], [-1.0, 0.0]]) * theta)
    np.testing.assert_allclose(oracle, [[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]], atol=1e-15)
    assert np.max(np.abs(paths.gamma[:, -1] - oracle)) <= 0.05


def test_launch_invariants():
    c, C = _random_coupling(2, 0)
    paths = simulate_forward(constant_spec(d1=2, c=c, C=C), 0.1, [1.0], SolverConfig(N=20, M=30))
    assert np.all(paths.xi[:, 0] == 1.0)
    assert np.all(paths.gamma[:, 0] == np.eye(2)) and np.all(paths.gamma_inv[:, 0] == np.eye(2))
    assert paths.increments.shape == (30, 20, 1)
    assert paths.gamma.shape == (30, 21, 2, 2)


def test_compose_trivial_cases():
    paths = simulate_forward(catalog("heat-1d"), 0.0, [0.0], SolverConfig(N=20, M=10))
    assert gamma_compose_check(paths, 3, 3, 3) == 0.0
    assert gamma_compose_check(paths, 0, 5, 20) == 0.0


def test_compose_random_coupling():
    c, C = _random_coupling(2, 1)
    paths = simulate_forward(constant_spec(d1=2, c=c, C=C), 0.0, [0.0], SolverConfig(N=50, M=200))
    assert gamma_compose_check(paths, 0, 17, 50) <= 1e-12
    assert gamma_compose_check(paths, 5, 30, 41) <= 1e-12
    # the stored functional is the full step product, recomputed by a plain loop
    loop = np.broadcast_to(np.eye(2), (200, 2, 2)).copy()
    for k in range(50):
        F = np.eye(2) + c * paths.grid.dt + C[0] * paths.increments[:, k, 0, None, None]
        loop = F @ loop
    np.testing.assert_allclose(paths.gamma[:, -1], loop, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(step_product(paths, 0, 50), loop, rtol=1e-12, atol=1e-13)
    with pytest.raises(ValueError):
        gamma_compose_check(paths, 5, 3, 10)


def test_inverse_scalar_exact():
    paths = simulate_forward(constant_spec(c=[[0.3]], C=[[[0.4]]]), 0.0, [0.0], SolverConfig(N=100, M=500))
    assert gamma_inverse_check(paths) <= 1e-12


def test_inverse_three_components():
    c, C = _random_coupling(3, 2)
    paths = simulate_forward(constant_spec(d1=3, c=c, C=C), 0.0, [0.0], SolverConfig(N=100, M=1000))
    assert gamma_inverse_check(paths) <= 1e-10
    # independent solve against the identity at the final layer
    solved = np.linalg.solve(paths.gamma[:, -1], np.broadcast_to(np.eye(3), (1000, 3, 3)))
    np.testing.assert_allclose(paths.gamma_inv[:, -1], solved, rtol=1e-9, atol=1e-10)


def test_inverse_euler_cross_check():
    c, C = _random_coupling(2, 3, scale=0.2)
    cfg = SolverConfig(N=400, M=200)
    paths = simulate_forward(constant_spec(d1=2, c=c, C=C), 0.0, [0.0], cfg)
    euler = gamma_inverse_euler(paths)
    # strong order 1/2 agreement
    assert np.mean(np.abs(euler[:, -1] - paths.gamma_inv[:, -1])) <= 0.05


def test_determinism_and_thread_independence():
    c, C = _random_coupling(2, 4)
    spec = constant_spec(d1=2, c=c, C=C)
    cfg = SolverConfig(N=10, M=9000)
    p1 = simulate_forward(spec, 0.0, [0.2], cfg, threads=1)
    p2 = simulate_forward(spec, 0.0, [0.2], cfg, threads=3)
    for name in ("increments", "xi", "gamma", "gamma_inv"):
        np.testing.assert_array_equal(getattr(p1, name), getattr(p2, name))


def test_paths_independent_of_M():
    spec = catalog("heat-1d")
    small = simulate_forward(spec, 0.0, [0.0], SolverConfig(N=5, M=10))
    large = simulate_forward(spec, 0.0, [0.0], SolverConfig(N=5, M=5000))
    np.testing.assert_array_equal(small.xi, large.xi[:10])


def test_weak_accuracy_heat():
    spec = catalog("heat-1d")
    cfg = SolverConfig(N=20, M=100_000)
    x = 0.5
    paths = simulate_forward(spec, 0.0, [x], cfg)
    vals = paths.xi[:, -1, 0] ** 2
    se = vals.std(ddof=1) / np.sqrt(cfg.M)
    assert abs(vals.mean() - (x**2 + 1.0)) <= 3 * se + 2 * paths.grid.dt


def test_singular_factor_reports_location():
    # F = 1 + c dt vanishes when c dt = -1
    spec = constant_spec(c=[[-10.0]], T=1.0)
    with pytest.raises(SimulationError, match="path 0 at step 0"):
        simulate_forward(spec, 0.0, [0.0], SolverConfig(N=10, M=5))


def test_start_time_checked():
    with pytest.raises(ValueError):
        simulate_forward(catalog("heat-1d"), 1.0, [0.0], SolverConfig(N=5, M=5))
    with pytest.raises(ValueError):
        simulate_forward(catalog("heat-1d"), 0.0, [0.0, 1.0], SolverConfig(N=5, M=5))


def test_dump_round_trip():
    c, C = _random_coupling(2, 5)
    paths = simulate_forward(constant_spec(d1=2, c=c, C=C), 0.2, [0.4], SolverConfig(N=7, M=13, seed=99))
    buf = io.BytesIO()
    dump_paths(paths, buf)
    raw = buf.getvalue()
    assert raw[:8] == b"FBSDEPTH"
    back = load_paths(io.BytesIO(raw))
    assert back.seed == 99 and back.grid == paths.grid
    for name in ("increments", "xi", "gamma", "gamma_inv"):
        np.testing.assert_array_equal(getattr(back, name), getattr(paths, name))
    with pytest.raises(ValueError):
        load_paths(io.BytesIO(b"NOTPATHS" + raw[8:]))
    with pytest.raises(ValueError):
        load_paths(io.BytesIO(raw[:-8]))
