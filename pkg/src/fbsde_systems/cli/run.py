"""Job execution and CSV reporting.

Result CSV (evaluate, grid, convergence jobs)::

    s,x1,...,xd,m,u,stderr,N,M,seed[,oracle,abs_error]

one row per (point x component); ``m`` is 1-based and the oracle columns are
present iff the problem has a reference solution.  Compare, scalar-crosscheck
and validate jobs use the headers in :data:`COMPARE_HEADER`,
:data:`SCALAR_HEADER` and :data:`VALIDATE_HEADER`.  Floats are written with
``repr`` (shortest round-trip form).

Exit codes: 0 success, 1 internal error, 2 configuration error, 3 I/O error,
4 solver error, 5 comparison violation or failed consistency check.
"""

from __future__ import annotations

import csv
import io
import itertools
import sys
from dataclasses import dataclass, replace
from typing import TextIO

import numpy as np

from ..bsde import SolverConfig, evaluate_u
from ..errors import ConfigError, FBSDEError
from ..problem import ProblemSpec
from ..scalarize import build_enlarged, combined_stderr, comparison_harness, solve_scalar
from ..validation import validate
from .config import RunConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_VIOLATION = 5

COMPARE_HEADER = ["s", "x", "m", "seed", "y1", "stderr1", "y2", "stderr2", "gap", "gap_stderr", "violation", "N", "M"]
SCALAR_HEADER = ["s", "x", "m", "h", "Y", "stderr", "h_dot_u", "h_dot_u_stderr", "combined_stderr", "abs_error", "pass", "N", "M", "seed"]
VALIDATE_HEADER = ["quantity", "estimate", "declared", "flagged"]


def result_header(d: int, with_oracle: bool) -> list[str]:
    head = ["s"] + [f"x{i + 1}" for i in range(d)] + ["m", "u", "stderr", "N", "M", "seed"]
    return head + (["oracle", "abs_error"] if with_oracle else [])


def _expand(header: list[str], d: int, d1: int) -> list[str]:
    out = []
    for col in header:
        if col == "x":
            out += [f"x{i + 1}" for i in range(d)]
        elif col == "h":
            out += [f"h{i + 1}" for i in range(d1)]
        else:
            out.append(col)
    return out


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


@dataclass
class JobResult:
    header: list[str]
    rows: list[list]
    summary: list[str]
    status: int = EXIT_OK

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([fmt(v) for v in row])
        return buf.getvalue()


def _point_rows(spec: ProblemSpec, s: float, x: np.ndarray, cfg: SolverConfig, threads) -> tuple[list[list], str]:
    est = evaluate_u(spec, s, x, cfg, threads=threads)
    oracle = spec.reference(s, x[None, :])[0] if spec.reference is not None else None
    rows = []
    for m in range(spec.d1):
        row = [s, *x, m + 1, est.value[m], est.stderr[m], est.N, est.M, est.seed]
        if oracle is not None:
            row += [oracle[m], abs(est.value[m] - oracle[m])]
        rows.append(row)
    vals = ", ".join(f"{v:.6g} +/- {e:.2g}" for v, e in zip(est.value, est.stderr))
    flag = "" if est.converged else f" (Picard not converged after {est.iterations} iterations)"
    return rows, f"u({s:g}, {np.array2string(x, separator=', ')}) = [{vals}]{flag}"


def _evaluate(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec = config.problems[0]
    x = np.asarray(config.start.x, dtype=np.float64)
    rows, line = _point_rows(spec, config.start.s, x, cfg, threads)
    return JobResult(result_header(spec.d, spec.reference is not None), rows, [line])


def _grid(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec = config.problems[0]
    rows, lines = [], []
    for point in itertools.product(*config.grid.x):
        r, line = _point_rows(spec, config.grid.s, np.asarray(point, dtype=np.float64), cfg, threads)
        rows += r
        lines.append(line)
    lines.append(f"grid: {len(lines)} points evaluated")
    return JobResult(result_header(spec.d, spec.reference is not None), rows, lines)


def _convergence(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec = config.problems[0]
    x = np.asarray(config.start.x, dtype=np.float64)
    rows, lines = [], []
    for ref in config.refinements:
        overrides = {k: v for k, v in ref.model_dump().items() if v is not None}
        r, line = _point_rows(spec, config.start.s, x, replace(cfg, **overrides), threads)
        rows += r
        lines.append(f"N={r[0][spec.d + 4]} M={r[0][spec.d + 5]}: {line}")
    return JobResult(result_header(spec.d, spec.reference is not None), rows, lines)


def _compare(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec1, spec2 = config.problems
    block = config.compare
    x = np.asarray(config.start.x, dtype=np.float64)
    s = config.start.s
    report = comparison_harness(spec1, spec2, s, x, cfg, block.n_seeds, block.c31_samples, threads)
    rows = []
    for rec in report.records:
        for m in range(spec1.d1):
            viol = rec.y1[m] > rec.y2[m] + 3.0 * (rec.stderr1[m] + rec.stderr2[m])
            rows.append([s, *x, m + 1, rec.seed, rec.y1[m], rec.stderr1[m], rec.y2[m], rec.stderr2[m],
                         rec.gap[m], rec.gap_stderr[m], bool(viol), cfg.N, cfg.M])
    lines = [
        f"comparison hypotheses: {report.c31.verdict} (pass rate {report.c31.pass_rate:.3f})",
        f"{report.total_violations} violations / {report.n_seeds} seeds",
    ]
    status = EXIT_OK
    if report.exploratory:
        lines.append("WARNING: comparison hypotheses not satisfied; report is exploratory")
        lines += [f"  {f}" for f in report.c31.failures]
    elif report.total_violations:
        status = EXIT_VIOLATION
    return JobResult(_expand(COMPARE_HEADER, spec1.d, spec1.d1), rows, lines, status)


def _scalar(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec = config.problems[0]
    block = config.scalar
    x = np.asarray(config.start.x, dtype=np.float64)
    s = config.start.s
    spread = block.launch_spread if block is not None else 1.0
    if block is not None and block.directions is not None:
        dirs = np.asarray(block.directions, dtype=np.float64)
    else:
        n = block.n_random if block is not None else 5
        dirs = np.random.default_rng(cfg.seed).normal(size=(n, spec.d1))
    vec = evaluate_u(spec, s, x, cfg, threads=threads)
    rows, failures = [], 0
    for j, h in enumerate(dirs):
        est = solve_scalar(build_enlarged(spec, h), s, x, cfg, threads=threads, launch_spread=spread)
        hu = float(h @ vec.value)
        hu_se = float(np.sqrt(np.sum(h**2 * vec.stderr**2)))
        band = combined_stderr(est, vec, h)
        err = abs(est.value[0] - hu)
        ok = err <= 3.0 * band
        failures += not ok
        rows.append([s, *x, j + 1, *h, est.value[0], est.stderr[0], hu, hu_se, band, err, ok, cfg.N, cfg.M, cfg.seed])
    lines = [f"scalar reduction: {len(dirs) - failures}/{len(dirs)} directions within 3 combined stderr"]
    return JobResult(_expand(SCALAR_HEADER, spec.d, spec.d1), rows, lines, EXIT_VIOLATION if failures else EXIT_OK)


def _validate(config: RunConfig, cfg: SolverConfig, threads) -> JobResult:
    spec = config.problems[0]
    block = config.validate_
    count = block.sample_count if block is not None else 1000
    box = block.box if block is not None else 10.0
    report = validate(spec, count, cfg.seed, box)
    rows = [[q, est, dec, flag] for q, est, dec, flag in report.rows()]
    lines = [f"validate: {len(report.flags)} flagged" + (f" ({', '.join(report.flags)})" if report.flags else "")]
    return JobResult(VALIDATE_HEADER, rows, lines)


JOBS = {
    "evaluate": _evaluate,
    "grid": _grid,
    "convergence": _convergence,
    "compare": _compare,
    "scalar-crosscheck": _scalar,
    "validate": _validate,
}


def execute(config: RunConfig, seed: int | None = None, threads: int | None = None) -> JobResult:
    """Run the configured job and return its CSV rows and summary lines."""
    cfg = config.solver_config(seed)
    return JOBS[config.job](config, cfg, threads if threads is not None else config.threads)


def run(config: RunConfig, out: str | None = None, seed: int | None = None, threads: int | None = None,
        stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    """Execute ``config``, write the CSV and print the summary; returns the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    path = out or config.output or "results.csv"
    try:
        result = execute(config, seed, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    except (FBSDEError, ValueError) as exc:
        print(f"solver error: {exc}", file=stderr)
        return EXIT_SOLVER
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(result.csv_text())
    except OSError as exc:
        print(f"I/O error: cannot write {path}: {exc}", file=stderr)
        return EXIT_IO
    for line in result.summary:
        print(line, file=stdout)
    return result.status
