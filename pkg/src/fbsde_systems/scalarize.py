"""Scalar equation on the enlarged phase space and comparison harnesses.

The state ``kappa = (xi, eta)`` with ``eta = Gamma h`` solves
``dkappa = q dt + Q dW`` where ``W = (w, w)``, ``q = (a, c eta)`` and
``Q = [[A, 0], [0, C eta]]`` (column ``k`` of ``C eta`` is ``C_k eta``).  The
scalar value ``Y = <eta, u(t, xi)>`` solves a backward equation with driver
``<eta, g(t, xi, u, K)>``; since ``Y`` is linear in ``eta``, ``u`` and ``K``
are recovered from a regression basis ``eta_l * phi(xi)``.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .bsde import Estimate, SolverConfig, picard_solve
from .errors import DimensionError
from .forward import PATH_CHUNK, simulate_forward, step_major
from .problem import ProblemSpec
from .regression import PolynomialBasis, RegressionStep
from .rng import LAUNCH_STREAM, brownian_increments, standard_normals
from .validation import validate


@dataclass(frozen=True)
class EnlargedSpec:
    """Coefficients of the enlarged forward system and its scalar driver.

    ``q(t, kappa)`` returns ``(n, d + d1)``, ``Q(t, kappa)`` returns
    ``(n, d + d1, 2 d)`` and ``G_tilde(t, kappa, u, K)`` returns ``(n,)``:
    the pairing ``<eta, g(t, xi, u, K)>``, equal to ``<h, f(t, y, z)>`` with
    ``y = Gamma^T u`` and ``z = Gamma^T K``.
    """

    base: ProblemSpec
    h: np.ndarray
    q: Callable[[float, np.ndarray], np.ndarray]
    Q: Callable[[float, np.ndarray], np.ndarray]
    G_tilde: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

    @property
    def dim(self) -> int:
        return self.base.d + self.base.d1


def build_enlarged(spec: ProblemSpec, h) -> EnlargedSpec:
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    if h.shape != (spec.d1,):
        raise DimensionError(f"direction h must have {spec.d1} components, got {h.shape[0]}")
    if not np.all(np.isfinite(h)):
        raise ValueError("direction h must be finite")
    d, d1 = spec.d, spec.d1

    def split(kappa):
        kappa = np.asarray(kappa, dtype=np.float64)
        if kappa.ndim != 2 or kappa.shape[1] != d + d1:
            raise DimensionError(f"kappa must have shape (n, {d + d1}), got {kappa.shape}")
        return kappa[:, :d], kappa[:, d:]

    def q(t, kappa):
        x, eta = split(kappa)
        return np.concatenate([spec.drift(t, x), np.einsum("nij,nj->ni", spec.zero_order(t, x), eta)], axis=1)

    def Q(t, kappa):
        x, eta = split(kappa)
        out = np.zeros((x.shape[0], d + d1, 2 * d))
        out[:, :d, :d] = spec.diffusion(t, x)
        out[:, d:, d:] = np.einsum("nkij,nj->nik", spec.gradient_coupling(t, x), eta)
        return out

    def G_tilde(t, kappa, u, K):
        x, eta = split(kappa)
        return np.sum(eta * spec.reaction(t, x, u, K), axis=1)

    return EnlargedSpec(spec, h, q, Q, G_tilde)


def launch_directions(h: np.ndarray, M: int, seed: int, spread: float) -> np.ndarray:
    """Per-path initial ``eta``: ``h + spread * |h| * N(0, I)`` on a dedicated stream."""
    h = np.asarray(h, dtype=np.float64)
    if spread == 0 or not np.any(h):
        return np.broadcast_to(h, (M, h.size)).copy()
    noise = standard_normals(seed, np.arange(M, dtype=np.uint64), h.size, stream=LAUNCH_STREAM)
    return h + spread * np.linalg.norm(h) * noise


def simulate_enlarged(
    enlarged: EnlargedSpec, s: float, x, config: SolverConfig, threads: int | None = None, eta0: np.ndarray | None = None,
):
    """Euler paths of ``kappa`` on the shared noise; returns ``(grid points, dw, kappa)``.

    The Brownian increments are keyed exactly as in the vector solver, so the
    ``xi`` block coincides with :func:`simulate_forward` for equal seeds.
    ``eta0`` overrides the launch direction per path (default ``h``).
    """
    spec = enlarged.base
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (spec.d,):
        raise ValueError(f"x must have {spec.d} components, got {x.shape[0]}")
    if not 0 <= s < spec.T:
        raise ValueError(f"start time must satisfy 0 <= s < T={spec.T}, got {s}")
    M, N, n = int(config.M), int(config.N), enlarged.dim
    dt = (spec.T - s) / N
    times = s + dt * np.arange(N + 1)
    times[-1] = spec.T
    dw = step_major(M, N, spec.d)
    kappa = step_major(M, N + 1, n)
    kappa[:, 0, : spec.d] = x
    kappa[:, 0, spec.d :] = enlarged.h if eta0 is None else eta0

    def work(bound):
        lo, hi = bound
        inc = brownian_increments(config.seed, np.arange(lo, hi, dtype=np.uint64), N, spec.d, dt)
        dw[lo:hi] = inc
        for k in range(N):
            K = kappa[lo:hi, k]
            dW = np.concatenate([inc[:, k], inc[:, k]], axis=1)
            kappa[lo:hi, k + 1] = K + enlarged.q(times[k], K) * dt + np.einsum("nij,nj->ni", enlarged.Q(times[k], K), dW)

    bounds = [(lo, min(lo + PATH_CHUNK, M)) for lo in range(0, M, PATH_CHUNK)]
    workers = max(1, int(threads or 1))
    if workers == 1 or len(bounds) == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, bounds))
    return times, dw, kappa


@dataclass
class ScalarSolution:
    Y: np.ndarray  # (M, N+1)
    picard_residuals: list[float]
    converged: bool
    iterations: int


def _structured(eta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # columns eta_l * phi_i, ordered l-major
    return (eta[:, :, None] * phi[:, None, :]).reshape(eta.shape[0], -1)


def _scalar_picard(enlarged: EnlargedSpec, times, dw, kappa, config: SolverConfig) -> ScalarSolution:
    spec = enlarged.base
    d, d1 = spec.d, spec.d1
    M, N = kappa.shape[0], kappa.shape[1] - 1
    dt = times[1] - times[0]
    weights = np.exp(config.effective_beta(spec) * (times[:N] - times[0]))
    basis = PolynomialBasis(d, config.basis_degree)
    eta_launch = kappa[:, 0, d:]
    fixed_launch = bool(np.all(eta_launch == eta_launch[0]))
    steps: dict[int, tuple[RegressionStep, np.ndarray]] = {}

    def step(k):
        if k not in steps:
            phi, _ = basis.features(kappa[:, k, :d])
            steps[k] = (RegressionStep(_structured(kappa[:, k, d:], phi), config.ridge), phi)
        return steps[k]

    def fit_u(k, target):
        """Fitted ``<eta, v>`` and the coefficient field ``v`` (M, d1, q) for target (M, q)."""
        reg, phi = step(k)
        coef = reg.coefficients(target).reshape(d1, phi.shape[1], -1)
        v = np.einsum("ni,liq->nlq", phi, coef)
        return np.einsum("nl,nlq->nq", kappa[:, k, d:], v), v

    Y_T = np.sum(kappa[:, N, d:] * spec.terminal(kappa[:, N, :d]), axis=1)
    Y = np.empty((M, N + 1))
    Y[:, N] = Y_T
    u = np.empty((M, N, d1))
    K = np.zeros((M, N, d1, d))
    for k in range(N - 1, -1, -1):
        fit, v = fit_u(k, Y_T[:, None])
        Y[:, k] = fit[:, 0]
        u[:, k] = v[:, :, 0]
    Y[:, 0] = Y_T

    residuals: list[float] = []
    converged = False
    it = 0
    for it in range(1, config.picard_max + 1):
        Y_new = np.empty_like(Y)
        u_new = np.empty_like(u)
        K_new = np.empty_like(K)
        Y_new[:, N] = Y_T
        S = np.zeros(M)
        for k in range(N - 1, -1, -1):
            if k == 0 and fixed_launch:
                # eta and xi are both deterministic here; borrow the next layer
                u_k = np.broadcast_to(u[:, min(1, N - 1)].mean(axis=0), (M, d1))
                K_k = np.broadcast_to(K[:, min(1, N - 1)].mean(axis=0), (M, d1, d))
            else:
                u_k, K_k = u[:, k], K[:, k]
            g_k = spec.reaction(float(times[k]), kappa[:, k, :d], u_k, K_k)
            # the driver <eta, g>, sharing the evaluation of g with the u update
            G_k = np.sum(kappa[:, k, d:] * g_k, axis=1)
            W = Y_T + S
            fit_W, v = fit_u(k, W[:, None])
            fit_W = fit_W[:, 0]
            Y_new[:, k] = fit_W + G_k * dt
            u_new[:, k] = v[:, :, 0] + g_k * dt
            _, kv = fit_u(k, (W - fit_W)[:, None] * dw[:, k] / dt)
            K_new[:, k] = kv
            S = S + G_k * dt
        Y_new[:, 0] = Y_T + S
        diff = np.mean((Y_new[:, :N] - Y[:, :N]) ** 2, axis=0)
        residuals.append(float(math.sqrt(np.sum(weights * diff) * dt)))
        Y, u, K = Y_new, u_new, K_new
        if not np.isfinite(residuals[-1]):
            break
        if residuals[-1] <= config.picard_tol:
            converged = True
            break
    return ScalarSolution(Y, residuals, converged, it)


def _launch_readout(Y0: np.ndarray, eta0: np.ndarray, h: np.ndarray) -> tuple[float, float]:
    """``<h, c>`` for the no-intercept fit ``Y0 ~ <eta0, c>``, with a sandwich standard error."""
    G = eta0.T @ eta0
    c = np.linalg.solve(G, eta0.T @ Y0)
    r = Y0 - eta0 @ c
    w = np.linalg.solve(G, h)
    meat = (eta0 * r[:, None]).T @ (eta0 * r[:, None])
    return float(h @ c), float(math.sqrt(max(w @ meat @ w, 0.0)))


def solve_scalar(
    enlarged: EnlargedSpec, s: float, x, config: SolverConfig, threads: int | None = None, launch_spread: float = 1.0,
) -> Estimate:
    """Estimate ``Y(s) = <h, u(s, x)>`` from the scalar backward equation.

    With ``launch_spread > 0`` each path starts from its own direction
    ``eta0 = h + launch_spread * |h| * N(0, I)``.  Because the value is linear
    in the launch direction, ``Y(s)`` is regressed on ``eta0`` and read off at
    ``h``.  The scatter keeps the ``eta``-directions identifiable, which a
    nonlinear reaction needs to recover ``u`` from ``Y``.  ``launch_spread=0``
    launches every path at ``h``; that is exact for reactions linear in
    ``(u, K)`` but biased otherwise.
    """
    if launch_spread < 0:
        raise ValueError(f"launch_spread must be >= 0, got {launch_spread}")
    start = time.perf_counter()
    M = int(config.M)
    h = enlarged.h
    if not np.any(h):
        zero = np.zeros(1)
        return Estimate(zero, zero.copy(), M, config.N, config.seed, time.perf_counter() - start, True, 0, ())
    eta0 = launch_directions(h, M, config.seed, launch_spread)
    times, dw, kappa = simulate_enlarged(enlarged, s, x, config, threads, eta0=eta0)
    with threadpool_limits(limits=1, user_api="blas"):
        sol = _scalar_picard(enlarged, times, dw, kappa, config)
    Y0 = sol.Y[:, 0]
    if launch_spread == 0:
        value = float(Y0.mean())
        stderr = float(Y0.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    else:
        value, stderr = _launch_readout(Y0, eta0, h)
    return Estimate(
        np.array([value]), np.array([stderr]), M, config.N, config.seed,
        time.perf_counter() - start, sol.converged, sol.iterations, tuple(sol.picard_residuals),
    )


def combined_stderr(scalar: Estimate, vector: Estimate, h) -> float:
    """Band for ``Y(s) - <h, u(s, x)>`` treating the two errors as independent."""
    h = np.asarray(h, dtype=np.float64)
    return float(math.sqrt(scalar.stderr[0] ** 2 + np.sum(h**2 * vector.stderr**2)))


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class C31Summary:
    terminal_checks: int
    terminal_passes: int
    generator_checks: int
    generator_passes: int
    lipschitz_ok: bool
    lipschitz_detail: dict[str, float | None]
    failures: tuple[str, ...] = ()

    @property
    def pass_rate(self) -> float:
        total = self.terminal_checks + self.generator_checks + 1
        ok = self.terminal_passes + self.generator_passes + int(self.lipschitz_ok)
        return ok / total

    @property
    def verdict(self) -> str:
        return "satisfied" if self.pass_rate == 1.0 else "not satisfied"


def check_C31(spec1: ProblemSpec, spec2: ProblemSpec, sample_count: int = 500, rng_seed: int = 0, box: float = 5.0, tol: float = 1e-12) -> C31Summary:
    """Sample the comparison hypotheses for the pair ``(spec1, spec2)``.

    i) ``u0^1 <= u0^2`` componentwise at random points; ii) ``g^1_m <= g^2_m``
    at random arguments with ``u^1_l <= u^2_l`` for ``l != m``,
    ``u^1_m = u^2_m`` and row ``m`` of ``K`` shared (sampled at ``Gamma = I``,
    where ``f = g``); iii) both Lipschitz estimates within any declared ``L``.
    """
    if (spec1.d, spec1.d1, spec1.T) != (spec2.d, spec2.d1, spec2.T):
        raise DimensionError("compared problems must share d, d1 and T")
    rng = np.random.default_rng(rng_seed)
    n, d, d1 = int(sample_count), spec1.d, spec1.d1
    failures: list[str] = []

    x = rng.uniform(-box, box, (n, d))
    term = spec2.terminal(x) - spec1.terminal(x)
    term_ok = np.all(term >= -tol, axis=1)
    if not term_ok.all():
        failures.append(f"i) u0 order fails at x={x[~term_ok][0].tolist()}")

    t = rng.uniform(0.0, spec1.T, n)
    m = rng.integers(0, d1, n)
    u1 = rng.uniform(-box, box, (n, d1))
    u2 = u1 + rng.exponential(1.0, (n, d1))
    u2[np.arange(n), m] = u1[np.arange(n), m]
    K1 = rng.uniform(-box, box, (n, d1, d))
    K2 = rng.uniform(-box, box, (n, d1, d))
    K2[np.arange(n), m] = K1[np.arange(n), m]
    gen_ok = np.empty(n, dtype=bool)
    for i in range(n):
        sl = slice(i, i + 1)
        g1 = spec1.reaction(float(t[i]), x[sl], u1[sl], K1[sl])[0, m[i]]
        g2 = spec2.reaction(float(t[i]), x[sl], u2[sl], K2[sl])[0, m[i]]
        gen_ok[i] = g1 <= g2 + tol * max(1.0, abs(g1), abs(g2))
    if not gen_ok.all():
        i = int(np.argmin(gen_ok))
        failures.append(f"ii) generator order fails for component {int(m[i]) + 1} at t={t[i]:.4g}, x={x[i].tolist()}")

    detail: dict[str, float | None] = {}
    lip_ok = True
    for tag, spec in (("1", spec1), ("2", spec2)):
        declared = spec.lipschitz.L
        est = validate(spec, max(2, min(n, 200)), rng_seed, box).estimates["L"]
        detail[f"L{tag}_estimate"] = est
        detail[f"L{tag}_declared"] = declared
        if declared is not None and est > declared * (1 + 1e-9) + 1e-9:
            lip_ok = False
            failures.append(f"iii) problem {tag}: Lipschitz estimate {est:.4g} exceeds declared {declared:.4g}")
    return C31Summary(n, int(term_ok.sum()), n, int(gen_ok.sum()), lip_ok, detail, tuple(failures))


@dataclass(frozen=True)
class SeedRecord:
    seed: int
    y1: np.ndarray
    y2: np.ndarray
    stderr1: np.ndarray
    stderr2: np.ndarray
    # paired statistics of y2 - y1 on common random numbers
    gap: np.ndarray
    gap_stderr: np.ndarray


@dataclass(frozen=True)
class ComparisonReport:
    records: tuple[SeedRecord, ...]
    violations: np.ndarray  # per component
    max_violation: float
    c31: C31Summary | None
    exploratory: bool
    strict: np.ndarray  # per component: gap > 3 gap_stderr on every seed
    notes: tuple[str, ...] = field(default=())

    @property
    def total_violations(self) -> int:
        return int(self.violations.sum())

    @property
    def n_seeds(self) -> int:
        return len(self.records)


def _record(seed, a: np.ndarray, b: np.ndarray) -> SeedRecord:
    M = a.shape[0]
    root = math.sqrt(M)

    def se(v):
        return v.std(axis=0, ddof=1) / root if M > 1 else np.zeros(v.shape[1])

    gap = b - a
    return SeedRecord(seed, a.mean(axis=0), b.mean(axis=0), se(a), se(b), gap.mean(axis=0), se(gap))


def _summarise(records: list[SeedRecord], c31, notes=()) -> ComparisonReport:
    width = records[0].y1.shape[0]
    violations = np.zeros(width, dtype=np.int64)
    worst = 0.0
    strict = np.ones(width, dtype=bool)
    for r in records:
        excess = r.y1 - r.y2 - 3.0 * (r.stderr1 + r.stderr2)
        violations += excess > 0
        worst = max(worst, float(np.max(r.y1 - r.y2, initial=0.0)))
        strict &= r.gap > 3.0 * r.gap_stderr
    exploratory = c31 is not None and c31.verdict != "satisfied"
    return ComparisonReport(tuple(records), violations, worst, c31, exploratory, strict, tuple(notes))


def comparison_harness(
    spec1: ProblemSpec, spec2: ProblemSpec, s: float, x, config: SolverConfig, n_seeds: int = 20,
    c31_samples: int = 500, threads: int | None = None,
) -> ComparisonReport:
    """Solve both problems on common random numbers for seeds ``config.seed + i``."""
    c31 = check_C31(spec1, spec2, c31_samples, config.seed)
    records = []
    for i in range(n_seeds):
        cfg = _with_seed(config, config.seed + i)
        y0 = []
        for spec in (spec1, spec2):
            paths = simulate_forward(spec, s, x, cfg, threads=threads)
            y0.append(picard_solve(paths, spec, cfg).y[:, 0].copy())
            del paths
        records.append(_record(cfg.seed, y0[0], y0[1]))
    notes = () if c31.verdict == "satisfied" else ("comparison hypotheses not satisfied; report is exploratory",)
    return _summarise(records, c31, notes)


def scalar_comparison(
    enlarged1: EnlargedSpec, enlarged2: EnlargedSpec, s: float, x, config: SolverConfig, n_seeds: int = 20,
    threads: int | None = None,
) -> ComparisonReport:
    """Order of the two scalar values ``Y^1(s)``, ``Y^2(s)`` across seeds on common random numbers."""
    records = []
    for i in range(n_seeds):
        cfg = _with_seed(config, config.seed + i)
        y0 = []
        for enl in (enlarged1, enlarged2):
            times, dw, kappa = simulate_enlarged(enl, s, x, cfg, threads)
            with threadpool_limits(limits=1, user_api="blas"):
                y0.append(_scalar_picard(enl, times, dw, kappa, cfg).Y[:, :1].copy())
        records.append(_record(cfg.seed, y0[0], y0[1]))
    return _summarise(records, None)


def _with_seed(config: SolverConfig, seed: int) -> SolverConfig:
    return replace(config, seed=int(seed))
