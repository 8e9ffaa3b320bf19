"""Picard-regression solver for the transformed backward equation.

For a launch point ``(s, x)`` the backward equation is
``dy = -f(t, y, z) dt + z dw`` with ``y(T) = Gamma^T u0(xi_T)`` and
``f(t, y, z) = Gamma^T g(xi, Gamma^{-T} y, Gamma^{-T} z)``.  Each Picard step
applies the map ``y_k = E[zeta + sum_{j>=k} f_j dt | F_k]``,
``z_k = E[(zeta + sum_{j>k} f_j dt) dw_k^T | F_k] / dt`` with conditional
expectations replaced by per-step least squares.

Regression state (``basis_state``):

``xi_only``
    targets regressed directly on monomials of ``xi_k``; exact when Gamma = I.
``xi_and_gamma``
    Gamma-equivariant basis: targets are pulled back with ``Gamma_k^{-T}``,
    regressed on monomials of ``xi_k`` and pushed forward with ``Gamma_k^T``.
    This spans ``Gamma_k^T v(xi_k)``, the exact form of the conditional
    expectation, so the pair ``(xi, Gamma)`` enters without a polynomial in
    the entries of Gamma.
``joint``
    monomials of ``(xi_k, vec Gamma_k)`` jointly; kept for comparison.
``auto``
    ``xi_only`` when every simulated Gamma is the identity, else ``xi_and_gamma``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError
from .forward import ForwardPaths, simulate_forward, step_major
from .problem import ProblemSpec
from .regression import PolynomialBasis, RegressionStep

BasisState = Literal["auto", "xi_only", "xi_and_gamma", "joint"]


@dataclass(frozen=True)
class SolverConfig:
    N: int = 100
    M: int = 20000
    seed: int = 1234
    picard_max: int = 30
    picard_tol: float = 1e-4
    # None means 1 + 4 L^2 with the declared L (0 when undeclared)
    beta: float | None = None
    basis_degree: int = 2
    basis_state: BasisState = "auto"
    ridge: float = 1e-10

    def __post_init__(self) -> None:
        if self.N < 1 or self.M < 1:
            raise ConfigError(f"N and M must be >= 1, got N={self.N}, M={self.M}")
        if self.picard_max < 1:
            raise ConfigError(f"picard_max must be >= 1, got {self.picard_max}")
        if not self.picard_tol > 0:
            raise ConfigError(f"picard_tol must be > 0, got {self.picard_tol}")
        if self.beta is not None and not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.basis_degree < 0:
            raise ConfigError(f"basis_degree must be >= 0, got {self.basis_degree}")
        if self.basis_state not in ("auto", "xi_only", "xi_and_gamma", "joint"):
            raise ConfigError(f"unknown basis_state {self.basis_state!r}")
        if not self.ridge >= 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be in [0, 2**64), got {self.seed}")

    def effective_beta(self, spec: ProblemSpec) -> float:
        if self.beta is not None:
            return float(self.beta)
        L = spec.lipschitz.L or 0.0
        return 1.0 + 4.0 * L * L


@dataclass
class BackwardSolution:
    y: np.ndarray  # (M, N+1, d1)
    z: np.ndarray  # (M, N, d1, d)
    picard_residuals: list[float]
    converged: bool
    iterations: int
    basis_state: str


@dataclass(frozen=True)
class Estimate:
    value: np.ndarray
    stderr: np.ndarray
    M: int
    N: int
    seed: int
    wall_time: float
    converged: bool = True
    iterations: int = 0
    picard_residuals: tuple[float, ...] = field(default=(), compare=False)


def _gt(G: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``G^T v`` batched over the leading axis; ``v`` is ``(n, d1)`` or ``(n, d1, d)``."""
    if v.ndim == 2:
        out = G[:, 0, :] * v[:, 0, None]
        for m in range(1, G.shape[1]):
            out += G[:, m, :] * v[:, m, None]
        return out
    out = G[:, 0, :, None] * v[:, 0, None, :]
    for m in range(1, G.shape[1]):
        out += G[:, m, :, None] * v[:, m, None, :]
    return out


def generator_f(t, xi_t, gamma_t, gamma_inv_t, y, z, spec: ProblemSpec) -> np.ndarray:
    """``Gamma^T g(t, xi, Gamma^{-T} y, Gamma^{-T} z)``.

    Accepts a single sample (``xi`` of shape ``(d,)``) or a batch with a
    leading sample axis; the result has the matching shape.
    """
    xi_t = np.asarray(xi_t, dtype=np.float64)
    single = xi_t.ndim == 1
    if single:
        xi_t, gamma_t, gamma_inv_t, y, z = (
            np.asarray(v, dtype=np.float64)[None] for v in (xi_t, gamma_t, gamma_inv_t, y, z)
        )
    u = _gt(gamma_inv_t, y)
    K = _gt(gamma_inv_t, z)
    out = _gt(gamma_t, spec.reaction(float(t), xi_t, u, K))
    return out[0] if single else out


def terminal_value(paths: ForwardPaths, spec: ProblemSpec) -> np.ndarray:
    """``zeta = Gamma_N^T u0(xi_N)`` per path."""
    return _gt(paths.gamma[:, -1], spec.terminal(paths.xi[:, -1]))


class _Projector:
    """Per-step conditional expectation operators, factorised once per solve."""

    def __init__(self, paths: ForwardPaths, config: SolverConfig):
        self.paths = paths
        mode = config.basis_state
        if mode == "auto":
            identity = np.array_equal(paths.gamma, np.broadcast_to(np.eye(paths.d1), paths.gamma.shape))
            mode = "xi_only" if identity else "xi_and_gamma"
        self.mode = mode
        self.degree = config.basis_degree
        self.ridge = config.ridge
        self._steps: dict[int, RegressionStep] = {}

    def _step(self, k: int) -> RegressionStep:
        if k not in self._steps:
            state = self.paths.xi[:, k]
            if self.mode == "joint":
                state = np.concatenate([state, self.paths.gamma[:, k].reshape(self.paths.M, -1)], axis=1)
            basis = PolynomialBasis(state.shape[1], self.degree)
            X, desc = basis.features(state)
            self._steps[k] = RegressionStep(X, self.ridge, desc)
        return self._steps[k]

    def to_local(self, k: int, v: np.ndarray) -> np.ndarray:
        """Map y-space values to the regression space (u-space for the structured basis)."""
        if self.mode == "xi_and_gamma":
            return _gt(self.paths.gamma_inv[:, k], v)
        return v

    def from_local(self, k: int, v: np.ndarray) -> np.ndarray:
        if self.mode == "xi_and_gamma":
            return _gt(self.paths.gamma[:, k], v)
        return v

    def fit(self, k: int, targets: np.ndarray) -> np.ndarray:
        return self._step(k).fit(targets)


def picard_solve(paths: ForwardPaths, spec: ProblemSpec, config: SolverConfig) -> BackwardSolution:
    """Successive approximations of the backward equation on fixed forward paths."""
    if paths.d != spec.d or paths.d1 != spec.d1:
        raise ConfigError(f"paths have (d, d1)=({paths.d}, {paths.d1}) but the problem has ({spec.d}, {spec.d1})")
    with threadpool_limits(limits=1, user_api="blas"):
        return _picard(paths, spec, config)


def _picard(paths: ForwardPaths, spec: ProblemSpec, config: SolverConfig) -> BackwardSolution:
    M, N, d, d1 = paths.M, paths.N, paths.d, paths.d1
    dt = paths.grid.dt
    times = paths.grid.points
    proj = _Projector(paths, config)
    weights = np.exp(config.effective_beta(spec) * (times[:N] - times[0]))
    zeta = terminal_value(paths, spec)

    y = step_major(M, N + 1, d1)
    z = step_major(M, N, d1, d)
    z[...] = 0.0
    y[:, N] = zeta
    # y^0: conditional mean of the terminal payoff, z^0 = 0
    zeta_local = {}
    for k in range(N - 1, -1, -1):
        loc = proj.to_local(k, zeta)
        zeta_local[k] = loc
        y[:, k] = proj.from_local(k, proj.fit(k, loc))
    y[:, 0] = zeta

    residuals: list[float] = []
    converged = False
    it = 0
    y_new = step_major(M, N + 1, d1)
    z_new = step_major(M, N, d1, d)
    for it in range(1, config.picard_max + 1):
        y_new[:, N] = zeta
        S = np.zeros((M, d1))
        for k in range(N - 1, -1, -1):
            t = float(times[k])
            y_arg = y[:, k]
            if k == 0:
                # y(s) is deterministic; the pathwise layer carries only noise
                y_arg = np.broadcast_to(y[:, 0].mean(axis=0), (M, d1))
            f_k = generator_f(t, paths.xi[:, k], paths.gamma[:, k], paths.gamma_inv[:, k], y_arg, z[:, k], spec)
            W_loc = zeta_local[k] + proj.to_local(k, S) if S.any() else zeta_local[k]
            fit_W = proj.fit(k, W_loc)
            V = fit_W + proj.to_local(k, f_k) * dt
            y_new[:, k] = proj.from_local(k, V)
            target = (W_loc - fit_W)[:, :, None] * paths.increments[:, k][:, None, :] / dt
            z_new[:, k] = proj.from_local(k, proj.fit(k, target))
            S = S + f_k * dt
        y_new[:, 0] = zeta + S
        diff = np.array([np.sum((y_new[:, k] - y[:, k]) ** 2) / M for k in range(N)])
        residuals.append(float(math.sqrt(np.sum(weights * diff) * dt)))
        y, y_new = y_new, y
        z, z_new = z_new, z
        if not np.isfinite(residuals[-1]):
            break
        if residuals[-1] <= config.picard_tol:
            converged = True
            break
    return BackwardSolution(y, z, residuals, converged, it, proj.mode)


def estimate_from(solution: BackwardSolution, paths: ForwardPaths, wall_time: float = 0.0) -> Estimate:
    y0 = solution.y[:, 0]
    value = y0.mean(axis=0)
    M = y0.shape[0]
    stderr = y0.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(value)
    return Estimate(
        value=value, stderr=stderr, M=M, N=paths.N, seed=paths.seed, wall_time=wall_time,
        converged=solution.converged, iterations=solution.iterations,
        picard_residuals=tuple(solution.picard_residuals),
    )


def evaluate_u(spec: ProblemSpec, s: float, x, config: SolverConfig, threads: int | None = None) -> Estimate:
    """Monte Carlo estimate of ``u(s, x)`` with standard errors."""
    start = time.perf_counter()
    paths = simulate_forward(spec, s, x, config, threads=threads)
    solution = picard_solve(paths, spec, config)
    return estimate_from(solution, paths, time.perf_counter() - start)


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    M: int
    value: np.ndarray
    stderr: np.ndarray
    error: float | None


def convergence_study(spec: ProblemSpec, s: float, x, configs: list[SolverConfig], oracle=None, threads: int | None = None) -> list[ConvergenceRow]:
    """Run :func:`evaluate_u` per config; ``error`` is the max-norm distance to the oracle.

    ``oracle`` is a ``d1``-vector; by default the problem's reference solution.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if oracle is None and spec.reference is not None:
        oracle = spec.reference(s, x[None, :])[0]
    rows = []
    for cfg in configs:
        est = evaluate_u(spec, s, x, cfg, threads=threads)
        err = None if oracle is None else float(np.max(np.abs(est.value - np.asarray(oracle))))
        rows.append(ConvergenceRow(cfg.N, cfg.M, est.value, est.stderr, err))
    return rows
