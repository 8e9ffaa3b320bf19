"""Deterministic reference solutions used as oracles.

These never touch the Monte Carlo pipeline: a method-of-lines finite-difference
solver for one-dimensional systems, Gauss-Hermite Gaussian convolution, and the
matrix-exponential oracle for constant zero-order coupling.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from .problem import ProblemSpec


def gaussian_expectation(f: Callable[[np.ndarray], np.ndarray], mean: np.ndarray, sd: float, order: int = 60) -> np.ndarray:
    """``E[f(mean + sd * Z)]`` for ``Z ~ N(0, 1)`` in one dimension, per row of ``mean``.

    ``f`` maps ``(n, 1)`` points to ``(n, q)``; returns ``(len(mean), q)``.
    """
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    pts = mean[:, None] + np.sqrt(2.0) * sd * nodes[None, :]
    vals = np.asarray(f(pts.reshape(-1, 1)))
    vals = vals.reshape(mean.size, order, -1)
    return np.einsum("nkq,k->nq", vals, weights) / np.sqrt(np.pi)


def linear_constant_oracle(spec: ProblemSpec, s: float, x: np.ndarray, order: int = 60) -> np.ndarray:
    """``exp(theta c^T) E[u0(x + A w_theta)]`` for constant ``c``, ``A``, ``C = 0``, ``a = 0``, ``g = 0``, ``d = 1``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    theta = spec.T - s
    probe = np.zeros((1, spec.d))
    A = float(spec.diffusion(s, probe)[0, 0, 0])
    c = spec.zero_order(s, probe)[0]
    smooth = gaussian_expectation(spec.terminal, x[:, 0], abs(A) * np.sqrt(theta), order)
    return smooth @ expm(theta * c.T).T


def _diff_operators(n: int, h: float, periodic: bool) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    ones = np.ones(n)
    d1 = sparse.diags([-ones[1:], ones[1:]], [-1, 1], shape=(n, n), format="lil") / (2 * h)
    d2 = sparse.diags([ones[1:], -2 * ones, ones[1:]], [-1, 0, 1], shape=(n, n), format="lil") / h**2
    if periodic:
        d1[0, n - 1] = -1 / (2 * h)
        d1[n - 1, 0] = 1 / (2 * h)
        d2[0, n - 1] = 1 / h**2
        d2[n - 1, 0] = 1 / h**2
    return d1.tocsr(), d2.tocsr()


def finite_difference_solve(
    spec: ProblemSpec,
    s: float,
    x_eval: np.ndarray,
    *,
    domain: tuple[float, float],
    nx: int = 801,
    boundary: Callable[[float, np.ndarray], np.ndarray] | None = None,
    rtol: float = 1e-9,
    atol: float = 1e-11,
) -> np.ndarray:
    """Method-of-lines solve of the one-dimensional system backwards from ``T`` to ``s``.

    Second-order central differences in space, BDF in time (run forward in
    ``tau = T - t``).  ``boundary=None`` means a periodic domain (the right
    endpoint is identified with the left); otherwise ``boundary(t, x)`` gives
    Dirichlet values at the two endpoints.  Returns ``(len(x_eval), d1)``
    interpolated by cubic splines.
    """
    if spec.d != 1:
        raise ValueError("the finite-difference oracle handles d = 1 only")
    lo, hi = domain
    d1 = spec.d1
    periodic = boundary is None
    if periodic:
        grid = np.linspace(lo, hi, nx, endpoint=False)
        interior = np.arange(nx)
    else:
        grid = np.linspace(lo, hi, nx)
        interior = np.arange(1, nx - 1)
    h = grid[1] - grid[0]
    pts = grid[:, None]
    D1, D2 = _diff_operators(nx, h, periodic)
    n_in = interior.size

    def full(U: np.ndarray, t: float) -> np.ndarray:
        if periodic:
            return U
        out = np.empty((nx, d1))
        out[interior] = U
        edges = boundary(t, pts[[0, -1]])
        out[0], out[-1] = edges[0], edges[1]
        return out

    def rhs(tau: float, flat: np.ndarray) -> np.ndarray:
        t = spec.T - tau
        U = full(flat.reshape(n_in, d1), t)
        Ux = D1 @ U
        Uxx = D2 @ U
        a = spec.drift(t, pts)[:, 0]
        A = spec.diffusion(t, pts)[:, 0, 0]
        c = spec.zero_order(t, pts)
        C = spec.gradient_coupling(t, pts)[:, 0]
        # K[l] = A u_l' + sum_m C[m, l] u_m
        K = (A[:, None] * Ux + np.einsum("nml,nm->nl", C, U))[:, :, None]
        dU = 0.5 * (A**2)[:, None] * Uxx + a[:, None] * Ux
        dU += np.einsum("nml,nm->nl", C, A[:, None] * Ux)
        dU += np.einsum("nml,nm->nl", c, U)
        dU += spec.reaction(t, pts, U, K)
        return dU[interior].reshape(-1)

    # neighbours in space, all components at each site
    site = sparse.diags([1, 1, 1], [-1, 0, 1], shape=(nx, nx), format="lil")
    if periodic:
        site[0, nx - 1] = site[nx - 1, 0] = 1
    site = site.tocsr()[interior][:, interior]
    sparsity = sparse.kron(site, np.ones((d1, d1)))

    u_init = spec.terminal(pts)[interior].reshape(-1)
    sol = solve_ivp(
        rhs, (0.0, spec.T - s), u_init, method="BDF", rtol=rtol, atol=atol,
        jac_sparsity=sparsity, t_eval=[spec.T - s],
    )
    if not sol.success:
        raise RuntimeError(f"finite-difference oracle failed: {sol.message}")
    U = full(sol.y[:, -1].reshape(n_in, d1), s)
    x_eval = np.asarray(x_eval, dtype=np.float64).reshape(-1)
    if periodic:
        period = hi - lo
        ext = np.concatenate([grid, [hi]])
        spline = CubicSpline(ext, np.vstack([U, U[:1]]), bc_type="periodic")
        return spline(lo + np.mod(x_eval - lo, period))
    return CubicSpline(grid, U)(x_eval)
