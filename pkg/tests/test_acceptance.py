"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the pytest terminal summary.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from fbsde_systems import CATALOG_NAMES, build_problem, catalog, manufactured_quasilinear
from fbsde_systems.bsde import SolverConfig, evaluate_u
from fbsde_systems.cli.main import main
from fbsde_systems.forward import gamma_compose_check, gamma_inverse_check, simulate_forward
from fbsde_systems.reference import finite_difference_solve, linear_constant_oracle
from fbsde_systems.scalarize import build_enlarged, combined_stderr, comparison_harness, solve_scalar

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

GRID5 = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_heat_feynman_kac():
    start = time.perf_counter()
    est = evaluate_u(catalog("heat-1d"), 0.0, [0.0], SolverConfig(N=50, M=100_000))
    wall = time.perf_counter() - start
    err = abs(est.value[0] - 1.0)
    band = 3 * est.stderr[0] + 0.02
    record(1, "heat-1d Feynman-Kac", err <= band and wall <= 30.0,
           f"u={est.value[0]:.5f} se={est.stderr[0]:.2e} |err|={err:.2e} <= {band:.3e}; wall {wall:.1f}s <= 30s")


def test_criterion_2_rotation_coupling():
    spec = catalog("rotation-coupling")
    x = np.array([0.3])
    est = evaluate_u(spec, 0.0, x, SolverConfig(N=200, M=100_000))
    oracle = linear_constant_oracle(spec, 0.0, x[None, :])[0]
    err = np.abs(est.value - oracle)
    band = 3 * est.stderr + 0.05
    record(2, "rotation coupling vs expm x Gaussian convolution", bool(np.all(err <= band)),
           f"u={np.round(est.value, 5).tolist()} oracle={np.round(oracle, 5).tolist()} "
           f"err={np.round(err, 5).tolist()} <= {np.round(band, 4).tolist()}")


def test_criterion_3_first_order_coupling():
    spec = catalog("first-order-coupling")
    ref = finite_difference_solve(spec, 0.0, GRID5, domain=(-np.pi, np.pi), nx=400)
    vals = np.array([evaluate_u(spec, 0.0, [x], SolverConfig(N=200, M=100_000)).value for x in GRID5])
    rel = float(np.max(np.abs(vals - ref)) / np.max(np.abs(ref)))
    fd_vs_closed = float(np.max(np.abs(ref - spec.reference(0.0, GRID5[:, None]))))
    record(3, "first-order coupling vs finite differences", rel <= 0.05,
           f"max|err|/max|ref| = {rel:.4f} <= 0.05 over 5 points (FD vs closed form {fd_vs_closed:.1e})")


def test_criterion_4_manufactured_quasilinear():
    mq = manufactured_quasilinear()
    spec = mq.base
    L, T = spec.lipschitz.L, spec.T
    worst, worst_ratio, ok = 0.0, 0.0, True
    for x in GRID5:
        est = evaluate_u(spec, 0.0, [x], SolverConfig(N=100, M=50_000))
        exact = mq.u_star.value(0.0, np.array([[x]]))[0]
        band = 3 * est.stderr + 0.05 * np.abs(exact)
        excess = np.abs(est.value - exact) - band
        worst = max(worst, float(np.max(np.abs(est.value - exact) / band)))
        r = est.picard_residuals
        ratios = [r[n + 1] / r[n] for n in range(1, len(r) - 1)]
        worst_ratio = max([worst_ratio, *ratios])
        ok &= bool(np.all(excess <= 0)) and est.converged and all(q <= 0.75 for q in ratios)
    record(4, "manufactured quasilinear system", ok,
           f"lambda*L*T={mq.lam * L * T:.2f}; max |err|/(3 se + 5% |u*|) = {worst:.3f} <= 1; max Picard ratio {worst_ratio:.3f} <= 0.75")


def test_criterion_5_gamma_algebra():
    lines, ok = [], True
    for name in CATALOG_NAMES:
        paths = simulate_forward(catalog(name), 0.0, [0.2], SolverConfig(N=100, M=1000))
        comp = max(gamma_compose_check(paths, 0, 37, 100), gamma_compose_check(paths, 10, 50, 90))
        inv = gamma_inverse_check(paths)
        ok &= comp <= 1e-12 and inv <= 1e-10
        lines.append(f"{name}: compose {comp:.1e}, inverse {inv:.1e}")
    record(5, "Gamma algebra on every catalog problem", ok, "; ".join(lines))


def _comparison_pair():
    common = {"d": 1, "d1": 2, "T": 1.0, "c": [[-0.2, 0.1], [0.1, -0.2]], "C": [[[0.1, 0.05], [0.05, 0.1]]],
              "lipschitz": {"L": 0.3}}
    g = ["0.1*u1 + 0.2*u2 + 0.1*tanh(K1_1)", "0.1*u1 + 0.1*u2 + 0.1*tanh(K2_1)"]
    s1 = build_problem({**common, "u0": ["sin(x1)", "cos(x1)"], "g": g})
    s2 = build_problem({**common, "u0": ["sin(x1) + 1", "cos(x1) + 1"], "g": [f"{e} + 0.5" for e in g]})
    return s1, s2


def test_criterion_6_comparison():
    s1, s2 = _comparison_pair()
    report = comparison_harness(s1, s2, 0.0, [0.2], SolverConfig(N=20, M=4000), n_seeds=20)
    min_z = min(float(np.min(r.gap / r.gap_stderr)) for r in report.records)
    ok = report.c31.verdict == "satisfied" and report.total_violations == 0 and bool(report.strict.all())
    record(6, "comparison under satisfied hypotheses", ok,
           f"hypotheses {report.c31.verdict}; {report.total_violations} violations / {report.n_seeds} seeds; "
           f"min gap/se = {min_z:.1f} > 3")


def test_criterion_7_scalar_reduction():
    cfg = SolverConfig(N=50, M=20_000)
    x = np.array([0.3])
    rng = np.random.default_rng(2024)
    worst, ok = 0.0, True
    for name in ("rotation-coupling", "manufactured-quasilinear"):
        spec = catalog(name)
        vec = evaluate_u(spec, 0.0, x, cfg)
        hs = rng.normal(size=(5, spec.d1))
        results = []
        for h in hs:
            est = solve_scalar(build_enlarged(spec, h), 0.0, x, cfg)
            z = abs(est.value[0] - h @ vec.value) / combined_stderr(est, vec, h)
            worst = max(worst, z)
            ok &= z <= 3
            results.append(est)
        for i in range(4):
            both = solve_scalar(build_enlarged(spec, hs[i] + hs[i + 1]), 0.0, x, cfg)
            a, b = results[i], results[i + 1]
            band = math.sqrt(a.stderr[0] ** 2 + b.stderr[0] ** 2 + both.stderr[0] ** 2)
            z = abs(both.value[0] - a.value[0] - b.value[0]) / band
            worst = max(worst, z)
            ok &= z <= 3
    record(7, "scalar reduction and additivity in h", ok,
           f"2 problems x 5 directions + 8 additivity checks; max |diff|/combined se = {worst:.2f} <= 3")


def test_criterion_8_convergence_trend():
    spec = catalog("heat-1d")
    errs = [abs(evaluate_u(spec, 0.0, [0.0], SolverConfig(N=N, M=100_000)).value[0] - 1.0) for N in (25, 50, 100)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    bias_ok = errs[0] > errs[1] > errs[2] and all(1.3 <= r <= 3.5 for r in ratios)
    ses = [evaluate_u(spec, 0.0, [0.0], SolverConfig(N=50, M=M)).stderr[0] for M in (1_000, 10_000, 100_000)]
    se_ratios = [ses[0] / ses[1], ses[1] / ses[2]]
    se_ok = all(abs(r / math.sqrt(10) - 1) <= 0.3 for r in se_ratios)
    record(8, "convergence trend (bias ratios, stderr scaling)", bias_ok and se_ok,
           f"errors N=25,50,100: {[f'{e:.2e}' for e in errs]} ratios {[f'{r:.2f}' for r in ratios]} in [1.3, 3.5]: "
           f"{'yes' if bias_ok else 'no'}; stderr ratios {[f'{r:.2f}' for r in se_ratios]} ~ 3.16 +/- 30%: "
           f"{'yes' if se_ok else 'no'}")


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        "job: grid\nproblem: manufactured-quasilinear\ngrid: {s: 0.0, x: [[-0.5, 0.5]]}\n"
        "solver: {N: 20, M: 10000}\nseed: 77\n"
    )
    outs = []
    for threads in ("1", "2", "2"):
        out = tmp_path / f"out{len(outs)}.csv"
        assert main([str(cfg), "--out", str(out), "--threads", threads]) == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    record(9, "byte-identical CSV across reruns and thread counts", ok,
           f"{len(outs[0])} bytes; threads 1 vs 2 identical: {outs[0] == outs[1]}; rerun identical: {outs[1] == outs[2]}")
