from __future__ import annotations

import numpy as np

from fbsde_systems.problem import LipschitzBudget, ProblemSpec


def constant_spec(
    d: int = 1,
    d1: int = 1,
    T: float = 1.0,
    a=None,
    A=None,
    c=None,
    C=None,
    g=None,
    u0=None,
    lipschitz: LipschitzBudget | None = None,
) -> ProblemSpec:
    """Problem with constant a, A, c, C; ``g``/``u0`` default to zero / ones."""
    a = np.zeros(d) if a is None else np.asarray(a, dtype=float)
    A = np.eye(d) if A is None else np.asarray(A, dtype=float)
    c = np.zeros((d1, d1)) if c is None else np.asarray(c, dtype=float)
    C = np.zeros((d, d1, d1)) if C is None else np.asarray(C, dtype=float)
    if g is None:
        def g(t, x, u, K):
            return np.zeros((x.shape[0], d1))
    if u0 is None:
        def u0(x):
            return np.ones((x.shape[0], d1))
    return ProblemSpec(
        d=d, d1=d1, T=T,
        a=lambda t, x: np.broadcast_to(a, (x.shape[0], d)),
        A=lambda t, x: np.broadcast_to(A, (x.shape[0], d, d)),
        c=lambda t, x: np.broadcast_to(c, (x.shape[0], d1, d1)),
        C=lambda t, x: np.broadcast_to(C, (x.shape[0], d, d1, d1)),
        g=g, u0=u0, lipschitz=lipschitz or LipschitzBudget(),
    )


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
