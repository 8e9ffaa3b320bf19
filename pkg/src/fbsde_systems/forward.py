"""Forward diffusion and its multiplicative operator functional.

Paths are simulated with Euler-Maruyama on a uniform grid.  The functional is
advanced by per-step factors ``F_k = I + c dt + sum_i C_i dw_i`` so that
``gamma[k] = F_{k-1} ... F_0`` and ``gamma_inv[k] = F_0^{-1} ... F_{k-1}^{-1}``.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, BinaryIO

import numpy as np

from .errors import SimulationError
from .problem import ProblemSpec
from .rng import brownian_increments

if TYPE_CHECKING:
    from .bsde import SolverConfig

SINGULAR_DET = 1e-14
# fixed so that results do not depend on the worker count
PATH_CHUNK = 4096


@dataclass(frozen=True)
class TimeGrid:
    s: float
    T: float
    N: int

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not self.T > self.s:
            raise ValueError(f"need s < T, got s={self.s}, T={self.T}")

    @property
    def dt(self) -> float:
        return (self.T - self.s) / self.N

    @property
    def points(self) -> np.ndarray:
        pts = self.s + self.dt * np.arange(self.N + 1)
        pts[-1] = self.T
        return pts


@dataclass
class ForwardPaths:
    grid: TimeGrid
    increments: np.ndarray  # (M, N, d)
    xi: np.ndarray  # (M, N+1, d)
    gamma: np.ndarray  # (M, N+1, d1, d1)
    gamma_inv: np.ndarray  # (M, N+1, d1, d1)
    start: tuple[float, np.ndarray]
    seed: int
    spec: ProblemSpec | None = field(default=None, repr=False, compare=False)

    @property
    def M(self) -> int:
        return self.xi.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def d(self) -> int:
        return self.xi.shape[2]

    @property
    def d1(self) -> int:
        return self.gamma.shape[2]


def step_major(M: int, steps: int, *tail: int) -> np.ndarray:
    """Uninitialised ``(M, steps, *tail)`` array stored step-major in memory.

    Indexing keeps the path-major shape, but the per-step slices ``[:, k]``
    that every kernel touches are contiguous.
    """
    buf = np.empty((steps, M) + tail)
    return np.moveaxis(buf, 0, 1)


def bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``a @ b`` for small matrices, summing over the short inner axis.

    Much faster than ``np.matmul`` on stacks of 2x2 or 3x3 matrices.
    """
    out = a[:, :, 0, None] * b[:, None, 0, :]
    for j in range(1, a.shape[2]):
        out += a[:, :, j, None] * b[:, None, j, :]
    return out


def step_factor(spec: ProblemSpec, t: float, x: np.ndarray, dw: np.ndarray, dt: float) -> np.ndarray:
    """``I + c(t, x) dt + sum_i C_i(t, x) dw_i`` for a batch of states."""
    c = spec.zero_order(t, x)
    C = spec.gradient_coupling(t, x)
    F = c * dt + np.sum(C * dw[:, :, None, None], axis=1)
    F += np.eye(spec.d1)
    return F


def _det(F: np.ndarray) -> np.ndarray:
    n = F.shape[-1]
    if n == 1:
        return F[:, 0, 0]
    if n == 2:
        return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    return np.linalg.det(F)


def _invert_factors(F: np.ndarray, k: int, offset: int) -> np.ndarray:
    det = _det(F)
    bad = np.abs(det) < SINGULAR_DET
    if bad.any():
        m = int(np.argmax(bad))
        cond = np.linalg.cond(F[m])
        raise SimulationError(
            f"singular step factor on path {offset + m} at step {k}: det={det[m]:.3e}, cond={cond:.3e}"
        )
    if F.shape[-1] == 1:
        return 1.0 / F
    if F.shape[-1] == 2:
        inv = np.empty_like(F)
        inv[:, 0, 0] = F[:, 1, 1] / det
        inv[:, 1, 1] = F[:, 0, 0] / det
        inv[:, 0, 1] = -F[:, 0, 1] / det
        inv[:, 1, 0] = -F[:, 1, 0] / det
        return inv
    return np.linalg.inv(F)


def _simulate_chunk(spec, grid, x, seed, first, last):
    paths = np.arange(first, last, dtype=np.uint64)
    P, N, d, d1 = last - first, grid.N, spec.d, spec.d1
    dt = grid.dt
    times = grid.points
    dw = step_major(P, N, d)
    dw[...] = brownian_increments(seed, paths, N, d, dt)
    xi = step_major(P, N + 1, d)
    gamma = step_major(P, N + 1, d1, d1)
    gamma_inv = step_major(P, N + 1, d1, d1)
    xi[:, 0] = x
    gamma[:, 0] = np.eye(d1)
    gamma_inv[:, 0] = np.eye(d1)
    for k in range(N):
        t = float(times[k])
        X = xi[:, k]
        a = spec.drift(t, X)
        A = spec.diffusion(t, X)
        xi[:, k + 1] = X + a * dt + np.einsum("nij,nj->ni", A, dw[:, k])
        F = step_factor(spec, t, X, dw[:, k], dt)
        Finv = _invert_factors(F, k, first)
        gamma[:, k + 1] = bmm(F, gamma[:, k])
        gamma_inv[:, k + 1] = bmm(gamma_inv[:, k], Finv)
    return dw, xi, gamma, gamma_inv


def simulate_forward(spec: ProblemSpec, s: float, x, config: SolverConfig, threads: int | None = None) -> ForwardPaths:
    """Simulate ``config.M`` paths of ``(xi, Gamma, Gamma^{-1})`` from ``(s, x)``.

    Bitwise reproducible for fixed ``(spec, s, x, config.N, config.M,
    config.seed)`` whatever ``threads`` is.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (spec.d,):
        raise ValueError(f"x must have {spec.d} components, got {x.shape[0]}")
    if not 0 <= s < spec.T:
        raise ValueError(f"start time must satisfy 0 <= s < T={spec.T}, got {s}")
    grid = TimeGrid(float(s), float(spec.T), int(config.N))
    M, N = int(config.M), grid.N
    dw = step_major(M, N, spec.d)
    xi = step_major(M, N + 1, spec.d)
    gamma = step_major(M, N + 1, spec.d1, spec.d1)
    gamma_inv = step_major(M, N + 1, spec.d1, spec.d1)
    bounds = [(lo, min(lo + PATH_CHUNK, M)) for lo in range(0, M, PATH_CHUNK)]

    def work(bound):
        lo, hi = bound
        dw[lo:hi], xi[lo:hi], gamma[lo:hi], gamma_inv[lo:hi] = _simulate_chunk(spec, grid, x, config.seed, lo, hi)

    workers = max(1, int(threads or 1))
    if workers == 1 or len(bounds) == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, bounds))
    return ForwardPaths(grid, dw, xi, gamma, gamma_inv, (float(s), x.copy()), int(config.seed), spec)


# ---------------------------------------------------------------------------
# algebraic diagnostics


def path_step_factors(paths: ForwardPaths, k: int) -> np.ndarray:
    """Per-step factors ``F_k`` for all paths, shape ``(M, d1, d1)``.

    Recomputed from the coefficients when the spec is attached, otherwise
    recovered as ``gamma[k+1] @ gamma_inv[k]``.
    """
    if paths.spec is not None:
        t = float(paths.grid.points[k])
        return step_factor(paths.spec, t, paths.xi[:, k], paths.increments[:, k], paths.grid.dt)
    return paths.gamma[:, k + 1] @ paths.gamma_inv[:, k]


def step_product(paths: ForwardPaths, k1: int, k2: int) -> np.ndarray:
    """``F_{k2-1} ... F_{k1}`` (identity when ``k1 == k2``)."""
    out = np.broadcast_to(np.eye(paths.d1), (paths.M, paths.d1, paths.d1)).copy()
    for k in range(k1, k2):
        out = path_step_factors(paths, k) @ out
    return out


def gamma_compose_check(paths: ForwardPaths, k1: int, k2: int, k3: int) -> float:
    """Max-norm defect of ``P[k2,k3) P[k1,k2) - P[k1,k3)`` over all paths."""
    if not 0 <= k1 <= k2 <= k3 <= paths.N:
        raise ValueError(f"need 0 <= k1 <= k2 <= k3 <= {paths.N}, got {(k1, k2, k3)}")
    lhs = step_product(paths, k2, k3) @ step_product(paths, k1, k2)
    return float(np.max(np.abs(lhs - step_product(paths, k1, k3)), initial=0.0))


def gamma_inverse_check(paths: ForwardPaths) -> float:
    """Max-norm defect of ``gamma @ gamma_inv - I`` over all paths and steps."""
    prod = paths.gamma @ paths.gamma_inv
    return float(np.max(np.abs(prod - np.eye(paths.d1)), initial=0.0))


def gamma_inverse_euler(paths: ForwardPaths) -> np.ndarray:
    """Euler discretisation of the inverse functional's own SDE.

    ``G_{k+1} = G_k (I - c dt + sum_i C_i^2 dt - sum_i C_i dw_i)``; a
    cross-check for ``paths.gamma_inv`` (agreement is only ``O(sqrt(dt))``).
    """
    if paths.spec is None:
        raise ValueError("paths carry no problem spec")
    spec, dt = paths.spec, paths.grid.dt
    out = np.empty_like(paths.gamma_inv)
    out[:, 0] = np.eye(paths.d1)
    for k in range(paths.N):
        t = float(paths.grid.points[k])
        X = paths.xi[:, k]
        c = spec.zero_order(t, X)
        C = spec.gradient_coupling(t, X)
        ito = np.einsum("nkij,nkjl->nil", C, C)
        step = np.eye(paths.d1) - c * dt + ito * dt - np.einsum("nkij,nk->nij", C, paths.increments[:, k])
        out[:, k + 1] = out[:, k] @ step
    return out


# ---------------------------------------------------------------------------
# binary dump
#
# little-endian; header "<8sqqqqddQ" = magic b"FBSDEPTH", d, d1, M, N, s, T, seed,
# followed by the start point x (d doubles) and then increments, xi, gamma,
# gamma_inv as float64 in C order (path-major).

_MAGIC = b"FBSDEPTH"
_HEADER = struct.Struct("<8sqqqqddQ")


def dump_paths(paths: ForwardPaths, fh: BinaryIO) -> None:
    fh.write(_HEADER.pack(_MAGIC, paths.d, paths.d1, paths.M, paths.N, paths.grid.s, paths.grid.T, paths.seed))
    for arr in (paths.start[1], paths.increments, paths.xi, paths.gamma, paths.gamma_inv):
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_paths(fh: BinaryIO) -> ForwardPaths:
    magic, d, d1, M, N, s, T, seed = _HEADER.unpack(fh.read(_HEADER.size))
    if magic != _MAGIC:
        raise ValueError("not a forward-path dump")

    def read(shape):
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated forward-path dump")
        return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

    x = read((d,))
    dw = read((M, N, d))
    xi = read((M, N + 1, d))
    gamma = read((M, N + 1, d1, d1))
    gamma_inv = read((M, N + 1, d1, d1))
    return ForwardPaths(TimeGrid(s, T, N), dw, xi, gamma, gamma_inv, (s, x), seed)
