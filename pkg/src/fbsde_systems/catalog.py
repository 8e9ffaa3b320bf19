"""Built-in problems with closed-form reference solutions.

======================== ==== ===== ======= =================================================
name                     d    d1    T       reference ``u(s, x)``, ``theta = T - s``
======================== ==== ===== ======= =================================================
heat-1d                  1    1     1       ``x**2 + theta``
rotation-coupling        1    2     pi/2    ``exp(-theta/2) expm(theta c^T) (cos x, sin x)``
first-order-coupling     1    2     1       ``Re[expm(theta (-I/2 + i C^T)) (-i, 1) e^{ix}]``
manufactured-quasilinear 1    2     1       ``(1.5 + e^{-theta} sin x, 1.5 + e^{-theta} cos x)``
======================== ==== ===== ======= =================================================

The first three are declarative (see :mod:`fbsde_systems.declarative`).  The
manufactured entry has ``a = -0.2 x``, ``A = 1``, constant non-diagonal ``c``
and ``C`` and reaction ``g = src + 0.4 (psi(u, K) - psi(u*, K*))`` with
``psi(u, K) = (sin u2 + tanh K11, cos u1 + tanh K21)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .declarative import build_problem
from .errors import CatalogError
from .problem import ExactSolution, LipschitzBudget, ManufacturedProblem, ProblemSpec, manufacture

ROTATION_C = np.array([[0.0, 1.0], [-1.0, 0.0]])
FIRST_ORDER_C = np.array([[[0.2, 0.6], [-0.4, 0.1]]])
MANUFACTURED_c = np.array([[-0.2, 0.3], [0.1, -0.1]])
MANUFACTURED_C = np.array([[[0.1, 0.3], [-0.2, 0.1]]])
MANUFACTURED_LAMBDA = 0.4

DECLARATIONS: dict[str, dict] = {
    "heat-1d": {
        "d": 1, "d1": 1, "T": 1.0,
        "u0": ["x1**2"],
        "lipschitz": {"K1": 1.0, "K2": 0.0, "L1": 0.0, "L2": 0.0, "L3": 0.0, "L": 0.0, "mu": 0.0, "C0": 20.0},
    },
    "rotation-coupling": {
        "d": 1, "d1": 2, "T": float(np.pi / 2),
        "c": ROTATION_C.tolist(),
        "u0": ["cos(x1)", "sin(x1)"],
        "lipschitz": {"K1": 1.0, "K2": 1.0, "L1": 0.0, "L2": 0.0, "L3": 0.0, "L": 0.0, "mu": 0.0, "C0": 1.0},
    },
    "first-order-coupling": {
        "d": 1, "d1": 2, "T": 1.0,
        "C": FIRST_ORDER_C.tolist(),
        "u0": ["sin(x1)", "cos(x1)"],
        "lipschitz": {"K1": 1.0, "K2": 0.41, "L1": 0.0, "L2": 0.0, "L3": 0.0, "L": 0.0, "mu": 0.0, "C0": 1.0},
    },
}


def _heat_reference(T):
    def ref(s, x):
        x = np.atleast_2d(x)
        return x[:, :1] ** 2 + (T - s)
    return ref


def _rotation_reference(T):
    def ref(s, x):
        x = np.atleast_2d(x)[:, 0]
        theta = T - s
        u0 = np.stack([np.cos(x), np.sin(x)], axis=1)
        return np.exp(-theta / 2) * u0 @ expm(theta * ROTATION_C.T).T
    return ref


def _first_order_reference(T):
    def ref(s, x):
        x = np.atleast_2d(x)[:, 0]
        theta = T - s
        gen = -0.5 * np.eye(2) + 1j * FIRST_ORDER_C[0].T
        v = expm(theta * gen) @ np.array([-1j, 1.0])
        return np.real(v[None, :] * np.exp(1j * x)[:, None])
    return ref


def manufactured_quasilinear(T: float = 1.0) -> ManufacturedProblem:
    """The ``manufactured-quasilinear`` entry together with its exact solution."""

    def decay(s):
        return np.exp(-(T - s))

    def value(s, x):
        x = np.atleast_2d(x)[:, 0]
        e = decay(s)
        return np.stack([1.5 + e * np.sin(x), 1.5 + e * np.cos(x)], axis=1)

    def ds(s, x):
        x = np.atleast_2d(x)[:, 0]
        e = decay(s)
        return np.stack([e * np.sin(x), e * np.cos(x)], axis=1)

    def grad(s, x):
        x = np.atleast_2d(x)[:, 0]
        e = decay(s)
        return np.stack([e * np.cos(x), -e * np.sin(x)], axis=1)[:, :, None]

    def hess(s, x):
        x = np.atleast_2d(x)[:, 0]
        e = decay(s)
        return np.stack([-e * np.sin(x), -e * np.cos(x)], axis=1)[:, :, None, None]

    def psi(u, K):
        return np.stack([np.sin(u[:, 1]) + np.tanh(K[:, 0, 0]), np.cos(u[:, 0]) + np.tanh(K[:, 1, 0])], axis=1)

    u_star = ExactSolution(d=1, d1=2, value=value, ds=ds, grad=grad, hess=hess)
    return manufacture(
        u_star,
        base_a=lambda t, x: -0.2 * x,
        base_A=lambda t, x: np.ones((x.shape[0], 1, 1)),
        base_c=lambda t, x: np.broadcast_to(MANUFACTURED_c, (x.shape[0], 2, 2)),
        base_C=lambda t, x: np.broadcast_to(MANUFACTURED_C, (x.shape[0], 1, 2, 2)),
        lam=MANUFACTURED_LAMBDA,
        psi=psi,
        T=T,
        lipschitz=LipschitzBudget(K1=1.04, K2=0.23, L1=0.04, L2=0.0, L3=4.0, L=0.4, mu=0.4, C0=1.0),
        name="manufactured-quasilinear",
    )


_REFERENCES = {
    "heat-1d": _heat_reference,
    "rotation-coupling": _rotation_reference,
    "first-order-coupling": _first_order_reference,
}

NAMES = ("heat-1d", "rotation-coupling", "first-order-coupling", "manufactured-quasilinear")


def catalog(name: str) -> ProblemSpec:
    """Return the catalog problem ``name``; see the module docstring for entries."""
    if name == "manufactured-quasilinear":
        return manufactured_quasilinear().base
    if name not in DECLARATIONS:
        raise CatalogError(f"unknown catalog entry {name!r}; available: {', '.join(NAMES)}")
    decl = DECLARATIONS[name]
    return build_problem(decl, name=name, reference=_REFERENCES[name](float(decl["T"])))
