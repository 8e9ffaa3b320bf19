"""Empirical growth and Lipschitz diagnostics for a problem's coefficients.

Estimates are maxima of the defining ratios over random point pairs in a box;
half of the pairs are independent draws and half are close neighbours so that
both global and local behaviour are probed.  Nothing is enforced: a quantity
is flagged when its estimate exceeds the declared budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import ProblemSpec

QUANTITIES = ("K1", "K2", "L1", "L2", "L3", "L", "mu", "C0")
_TOL = 1e-9


@dataclass(frozen=True)
class ValidationReport:
    estimates: dict[str, float]
    declared: dict[str, float | None]
    flags: tuple[str, ...]
    # per-coefficient Lipschitz ratios sup |f(x1) - f(x2)| / |x1 - x2|
    coefficient_ratios: dict[str, float] = field(default_factory=dict)
    sample_count: int = 0
    seed: int = 0

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def rows(self) -> list[tuple[str, float, float | None, bool]]:
        return [(q, self.estimates[q], self.declared[q], q in self.flags) for q in QUANTITIES]


def _pairs(rng: np.random.Generator, n: int, shape: tuple[int, ...], box: float) -> tuple[np.ndarray, np.ndarray]:
    first = rng.uniform(-box, box, (n,) + shape)
    far = rng.uniform(-box, box, (n,) + shape)
    near = np.clip(first + rng.normal(0.0, 1e-3 * box, (n,) + shape), -box, box)
    second = np.where((np.arange(n) % 2 == 0).reshape((n,) + (1,) * len(shape)), far, near)
    return first, second


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))


def _op_norm_sq(c: np.ndarray, C: np.ndarray) -> np.ndarray:
    # sup_h (|c h|^2 + sum_k |C_k h|^2) / |h|^2
    gram = np.einsum("nij,nik->njk", c, c) + np.einsum("nqij,nqik->njk", C, C)
    return np.linalg.eigvalsh(gram)[:, -1]


def _max_ratio(num: np.ndarray, den: np.ndarray) -> float:
    keep = den > 1e-300
    if not keep.any():
        return 0.0
    return float(np.max(num[keep] / den[keep], initial=0.0))


def validate(spec: ProblemSpec, sample_count: int = 1000, rng_seed: int = 0, box: float = 10.0) -> ValidationReport:
    """Estimate the growth/Lipschitz constants of ``spec`` over ``[-box, box]``."""
    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    rng = np.random.default_rng(rng_seed)
    n, d, d1 = int(sample_count), spec.d, spec.d1
    ratios: dict[str, float] = {}
    est: dict[str, float] = {}
    times = np.linspace(0.0, spec.T, 4)

    x1, x2 = _pairs(rng, n, (d,), box)
    u1, u2 = _pairs(rng, n, (d1,), box)
    K1, K2 = _pairs(rng, n, (d1, d), box)
    dx = _norm(x1 - x2)
    est.update(K1=0.0, K2=0.0, L1=0.0, L2=0.0, L3=0.0, L=0.0, mu=0.0)
    for key in ("a", "A", "c", "C", "g_x", "g_u", "g_K"):
        ratios[key] = 0.0
    for t in times:
        t = float(t)
        a1, a2 = spec.drift(t, x1), spec.drift(t, x2)
        A1, A2 = spec.diffusion(t, x1), spec.diffusion(t, x2)
        c1, c2 = spec.zero_order(t, x1), spec.zero_order(t, x2)
        C1, C2 = spec.gradient_coupling(t, x1), spec.gradient_coupling(t, x2)
        growth = (_norm(a1) ** 2 + _norm(A1) ** 2) / (1.0 + _norm(x1) ** 2)
        est["K1"] = max(est["K1"], float(growth.max()))
        est["K2"] = max(est["K2"], float(_op_norm_sq(c1, C1).max()))
        est["L1"] = max(est["L1"], _max_ratio(_norm(a1 - a2) ** 2 + _norm(A1 - A2) ** 2, dx**2))
        est["L2"] = max(est["L2"], _max_ratio(_op_norm_sq(c1 - c2, C1 - C2), dx**2))
        for key, (f1, f2) in {"a": (a1, a2), "A": (A1, A2), "c": (c1, c2), "C": (C1, C2)}.items():
            ratios[key] = max(ratios[key], _max_ratio(_norm(f1 - f2), dx))

        g_x = _max_ratio(_norm(spec.reaction(t, x1, u1, K1) - spec.reaction(t, x2, u1, K1)), dx)
        est["L3"] = max(est["L3"], g_x)
        ratios["g_x"] = max(ratios["g_x"], g_x)
        du, dK = _norm(u1 - u2), _norm(K1 - K2)
        g_uK = spec.reaction(t, x1, u1, K1)
        dg_u = spec.reaction(t, x1, u2, K1) - g_uK
        dg_K = spec.reaction(t, x1, u1, K2) - g_uK
        dg_both = spec.reaction(t, x1, u2, K2) - g_uK
        ratios["g_u"] = max(ratios["g_u"], _max_ratio(_norm(dg_u), du))
        ratios["g_K"] = max(ratios["g_K"], _max_ratio(_norm(dg_K), dK))
        est["L"] = max(est["L"], ratios["g_u"], ratios["g_K"], _max_ratio(_norm(dg_both), du + dK))
        # monotonicity: <u2 - u1, g(u2) - g(u1)> <= mu |u2 - u1|^2
        est["mu"] = max(est["mu"], _max_ratio(np.sum((u2 - u1) * dg_u, axis=1), du**2))

    est["C0"] = _max_ratio(_norm(spec.terminal(x1) - spec.terminal(x2)), dx)
    declared = spec.lipschitz.as_dict()
    flags = tuple(
        q for q in QUANTITIES
        if declared[q] is not None and est[q] > declared[q] * (1 + _TOL) + _TOL
    )
    return ValidationReport(est, declared, flags, ratios, n, int(rng_seed))
