"""Problem definitions for quasilinear parabolic systems and their FBSDEs.

Coefficient functions are vectorised over a leading sample axis: ``t`` is a
float, ``x`` has shape ``(n, d)``, and the returned arrays carry the same
leading ``n``.  Shapes per coefficient:

====================  ==========================  ====================
name                  call                        result
====================  ==========================  ====================
drift ``a``           ``a(t, x)``                 ``(n, d)``
diffusion ``A``       ``A(t, x)``                 ``(n, d, d)``
zero order ``c``      ``c(t, x)``                 ``(n, d1, d1)``
coupling ``C``        ``C(t, x)``                 ``(n, d, d1, d1)``
reaction ``g``        ``g(t, x, u, K)``           ``(n, d1)``
terminal ``u0``       ``u0(x)``                   ``(n, d1)``
====================  ==========================  ====================

``C[:, k]`` is the loading of Brownian component ``k``.  The diffusion acts as
``dxi = a dt + A dw`` and the multiplicative functional as
``dGamma = c Gamma dt + sum_k C_k Gamma dw_k``.  With ``y = Gamma^T u`` the
PDE solved by ``u`` is, componentwise in ``l``::

    du_l/ds + 1/2 tr(A A^T hess u_l) + <a, grad u_l>
        + sum_{i,m} Bc[i,l,m] d_i u_m + sum_m c[m,l] u_m + g_l(s, x, u, K) = 0

with ``Bc[i,l,m] = sum_k C_k[m,l] A[i,k]`` (see :func:`coupling_tensor`) and
``K[l,k] = (A^T grad u_l)_k + sum_m C_k[m,l] u_m`` (see :func:`gradient_load`).
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import CoefficientError, DimensionError, ManufactureError

Array = np.ndarray


@dataclass(frozen=True)
class LipschitzBudget:
    """Declared growth and Lipschitz constants; diagnostic metadata only."""

    K1: float | None = None
    K2: float | None = None
    L1: float | None = None
    L2: float | None = None
    L3: float | None = None
    L: float | None = None
    mu: float | None = None
    C0: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in ("K1", "K2", "L1", "L2", "L3", "L", "mu", "C0")}


@dataclass(frozen=True)
class ProblemSpec:
    d: int
    d1: int
    T: float
    a: Callable[[float, Array], Array]
    A: Callable[[float, Array], Array]
    c: Callable[[float, Array], Array]
    C: Callable[[float, Array], Array]
    g: Callable[[float, Array, Array, Array], Array]
    u0: Callable[[Array], Array]
    lipschitz: LipschitzBudget = field(default_factory=LipschitzBudget)
    name: str = "custom"
    # optional closed form u(s, x) -> (n, d1), used as an oracle
    reference: Callable[[float, Array], Array] | None = None
    # declarative source the spec was built from, if any
    declaration: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise DimensionError(f"d must be a positive integer, got {self.d!r}")
        if int(self.d1) != self.d1 or self.d1 < 1:
            raise DimensionError(f"d1 must be a positive integer, got {self.d1!r}")
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"T must be positive and finite, got {self.T!r}")

    # checked evaluation -------------------------------------------------

    def drift(self, t: float, x: Array) -> Array:
        return _checked("a", self.a(t, x), (x.shape[0], self.d), t, x)

    def diffusion(self, t: float, x: Array) -> Array:
        return _checked("A", self.A(t, x), (x.shape[0], self.d, self.d), t, x)

    def zero_order(self, t: float, x: Array) -> Array:
        return _checked("c", self.c(t, x), (x.shape[0], self.d1, self.d1), t, x)

    def gradient_coupling(self, t: float, x: Array) -> Array:
        return _checked("C", self.C(t, x), (x.shape[0], self.d, self.d1, self.d1), t, x)

    def reaction(self, t: float, x: Array, u: Array, K: Array) -> Array:
        return _checked("g", self.g(t, x, u, K), (x.shape[0], self.d1), t, x)

    def terminal(self, x: Array) -> Array:
        return _checked("u0", self.u0(x), (x.shape[0], self.d1), self.T, x)


def _checked(name: str, value: Any, shape: tuple[int, ...], t: float, x: Array) -> Array:
    value = np.asarray(value, dtype=np.float64)
    if value.shape != shape:
        try:
            value = np.broadcast_to(value, shape)
        except ValueError:
            raise CoefficientError(
                f"coefficient {name} returned shape {value.shape}, expected {shape}"
            ) from None
    bad = ~np.isfinite(value.reshape(shape[0], -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise CoefficientError(f"coefficient {name} is not finite at t={t!r}, x={x[i].tolist()} (sample {i})")
    return value


# ---------------------------------------------------------------------------
# first-order coupling


def derive_B(C: Array, A: Array) -> Array:
    """First-order coupling ``B[i, l, m] = sum_q C[q, l, m] * A[q, i]``.

    ``C`` has shape ``(..., d, d1, d1)`` and ``A`` shape ``(..., d, d)``.
    """
    C = np.asarray(C, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"operand A must be a square d x d matrix, got shape {A.shape}")
    d = A.shape[-1]
    if C.ndim < 3 or C.shape[-3] != d or C.shape[-1] != C.shape[-2]:
        raise DimensionError(f"operand C must have shape (d={d}, d1, d1), got {C.shape}")
    return np.einsum("...qlm,...qi->...ilm", C, A)


def coupling_tensor(C: Array, A: Array) -> Array:
    """Coupling ``Bc[i, l, m] = sum_k C[k, m, l] * A[i, k]`` of the generated PDE.

    This is :func:`derive_B` applied to the transposed loadings ``C_k^T`` and
    ``A^T``; the transposes come from ``y = Gamma^T u`` pairing the system
    index with the functional.  The two agree when every ``C_k`` and ``A``
    are symmetric.
    """
    return derive_B(np.swapaxes(np.asarray(C, dtype=np.float64), -1, -2), np.swapaxes(A, -1, -2))


def gradient_load(C: Array, A: Array, u: Array, grad: Array) -> Array:
    """``K[l, k] = sum_i grad[l, i] A[i, k] + sum_m C[k, m, l] u[m]`` over a batch.

    Shapes: ``C (n, d, d1, d1)``, ``A (n, d, d)``, ``u (n, d1)``,
    ``grad (n, d1, d)``; returns ``(n, d1, d)``.
    """
    return np.einsum("nli,nik->nlk", grad, A) + np.einsum("nkml,nm->nlk", C, u)


# ---------------------------------------------------------------------------
# exact solutions and manufactured problems


@dataclass(frozen=True)
class ExactSolution:
    """A smooth ``u(s, x)`` together with its analytic derivatives.

    Each callable takes ``(s, x)`` with ``x`` of shape ``(n, d)``: ``value``
    returns ``(n, d1)``, ``ds`` the time derivative ``(n, d1)``, ``grad``
    ``(n, d1, d)`` and ``hess`` ``(n, d1, d, d)``.
    """

    d: int
    d1: int
    value: Callable[[float, Array], Array]
    ds: Callable[[float, Array], Array] | None = None
    grad: Callable[[float, Array], Array] | None = None
    hess: Callable[[float, Array], Array] | None = None


def linear_operator(spec: ProblemSpec, s: float, x: Array, value: Array, ds: Array, grad: Array, hess: Array) -> Array:
    """The PDE left-hand side without the reaction term, shape ``(n, d1)``."""
    a = spec.drift(s, x)
    A = spec.diffusion(s, x)
    c = spec.zero_order(s, x)
    C = spec.gradient_coupling(s, x)
    cov = np.einsum("nik,njk->nij", A, A)
    out = ds + 0.5 * np.einsum("nij,nlij->nl", cov, hess)
    out += np.einsum("ni,nli->nl", a, grad)
    out += np.einsum("nilm,nmi->nl", coupling_tensor(C, A), grad)
    out += np.einsum("nml,nm->nl", c, value)
    return out


def exact_gradient_load(spec: ProblemSpec, exact: ExactSolution, s: float, x: Array) -> Array:
    return gradient_load(spec.gradient_coupling(s, x), spec.diffusion(s, x), exact.value(s, x), exact.grad(s, x))


def pde_residual(spec: ProblemSpec, exact: ExactSolution, s: float, x: Array) -> Array:
    """Residual of ``exact`` in the PDE generated by ``spec`` at ``(s, x)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    u = exact.value(s, x)
    lin = linear_operator(spec, s, x, u, exact.ds(s, x), exact.grad(s, x), exact.hess(s, x))
    return lin + spec.reaction(s, x, u, exact_gradient_load(spec, exact, s, x))


@dataclass(frozen=True)
class ManufacturedProblem:
    base: ProblemSpec
    u_star: ExactSolution
    lam: float


def manufacture(
    u_star: ExactSolution,
    base_a: Callable,
    base_A: Callable,
    base_c: Callable,
    base_C: Callable,
    lam: float,
    psi: Callable[[Array, Array], Array] | None = None,
    *,
    T: float,
    lipschitz: LipschitzBudget | None = None,
    name: str = "manufactured",
) -> ManufacturedProblem:
    """Build a problem whose exact solution is ``u_star``.

    The reaction term is ``g(s, x, u, K) = src(s, x) + lam * (psi(u, K) -
    psi(u*, K*))`` where ``K* = K(u*, grad u*)`` and ``src`` cancels the linear
    part of the operator evaluated on ``u_star``.  The terminal condition is
    ``u_star(T, .)``.
    """
    for attr in ("value", "ds", "grad", "hess"):
        if not callable(getattr(u_star, attr)):
            raise ManufactureError(f"u_star is missing the '{attr}' callback")
    if lam < 0:
        raise ManufactureError(f"lambda must be >= 0, got {lam}")
    if lam > 0 and not callable(psi):
        raise ManufactureError("psi is required when lambda > 0")

    def zero_g(t, x, u, K):
        return np.zeros((x.shape[0], u_star.d1))

    linear = ProblemSpec(
        d=u_star.d, d1=u_star.d1, T=T, a=base_a, A=base_A, c=base_c, C=base_C,
        g=zero_g, u0=lambda x: u_star.value(T, x),
    )

    def g(t, x, u, K):
        ustar = u_star.value(t, x)
        out = -linear_operator(linear, t, x, ustar, u_star.ds(t, x), u_star.grad(t, x), u_star.hess(t, x))
        if lam:
            kstar = exact_gradient_load(linear, u_star, t, x)
            out = out + lam * (np.asarray(psi(u, K)) - np.asarray(psi(ustar, kstar)))
        return out

    base = ProblemSpec(
        d=u_star.d, d1=u_star.d1, T=T, a=base_a, A=base_A, c=base_c, C=base_C, g=g,
        u0=lambda x: u_star.value(T, x),
        lipschitz=lipschitz or LipschitzBudget(),
        name=name,
        reference=u_star.value,
    )
    return ManufacturedProblem(base=base, u_star=u_star, lam=float(lam))
