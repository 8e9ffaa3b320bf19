"""Declarative problem descriptions.

A declaration is a plain mapping, the same shape the YAML run config uses::

    d: 1
    d1: 2
    T: 1.0
    a: [0.0]                        # constant
    A: {const: [[1.0]]}
    c: {const: [[0, 1], [-1, 0]], slope: [[[0.1, 0], [0, 0.1]]]}
    C: [[[0.0, 0.0], [0.0, 0.0]]]
    g: ["-0.5*u1 + 0.1*u2", "tanh(K2_1)"]
    u0: ["cos(x1)", "sin(x1)"]
    lipschitz: {L: 0.5}

``a``, ``A``, ``c`` and ``C`` are affine in ``x``: ``const + sum_i x_i * slope[i]``
where ``slope`` has shape ``(d,) + const.shape``.  ``g`` and ``u0`` are lists of
expressions (one per component) over the variables ``t``, ``x1..xd``,
``u1..ud1`` and ``K<l>_<k>`` (1-based), numeric literals, ``pi``, the operators
``+ - * / **`` and the functions in :data:`FUNCTIONS`.  ``g`` may be omitted
for a zero reaction term.
"""

from __future__ import annotations

import ast
import re
from collections.abc import Mapping
from typing import Any

import numpy as np

from .errors import ExpressionError
from .problem import LipschitzBudget, ProblemSpec

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
CONSTANTS = {"pi": np.pi}

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)
_K_NAME = re.compile(r"K(\d+)_(\d+)$")


class Expression:
    """A compiled whitelisted scalar expression, vectorised over samples."""

    def __init__(self, source: str, d: int, d1: int, allow_state: bool = True):
        self.source = str(source)
        self.d = d
        self.d1 = d1
        try:
            tree = ast.parse(self.source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {self.source!r}: {exc.msg}") from None
        names = set()
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(f"{type(node).__name__} is not allowed in expression {self.source!r}")
            if isinstance(node, ast.Constant) and (
                isinstance(node.value, bool) or not isinstance(node.value, (int, float))
            ):
                raise ExpressionError(f"only numeric literals are allowed in {self.source!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                    raise ExpressionError(
                        f"only calls to {sorted(FUNCTIONS)} are allowed in {self.source!r}"
                    )
                if len(node.args) != 1:
                    raise ExpressionError(f"functions take exactly one argument in {self.source!r}")
            if isinstance(node, ast.Name):
                names.add(node.id)
        allowed = self._variable_names(allow_state)
        for name in names - set(FUNCTIONS):
            if name not in allowed and name not in CONSTANTS:
                raise ExpressionError(
                    f"unknown name {name!r} in expression {self.source!r}; "
                    f"allowed variables: t, x1..x{d}" + (f", u1..u{d1}, K<l>_<k>" if allow_state else "")
                )
        self.names = names
        self._code = compile(tree, "<expression>", "eval")

    def _variable_names(self, allow_state: bool) -> set[str]:
        out = {"t"} | {f"x{i + 1}" for i in range(self.d)}
        if allow_state:
            out |= {f"u{i + 1}" for i in range(self.d1)}
            out |= {f"K{l + 1}_{k + 1}" for l in range(self.d1) for k in range(self.d)}
        return out

    def __call__(self, t: float, x: np.ndarray, u: np.ndarray | None = None, K: np.ndarray | None = None) -> np.ndarray:
        n = x.shape[0]
        env: dict[str, Any] = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS, "t": t}
        for i in range(self.d):
            env[f"x{i + 1}"] = x[:, i]
        for name in self.names:
            if name.startswith("u") and name[1:].isdigit():
                env[name] = u[:, int(name[1:]) - 1]
            m = _K_NAME.match(name)
            if m:
                env[name] = K[:, int(m.group(1)) - 1, int(m.group(2)) - 1]
        with np.errstate(all="ignore"):
            value = eval(self._code, env)  # noqa: S307 - AST restricted to the whitelist above
        return np.broadcast_to(np.asarray(value, dtype=np.float64), (n,))


def _affine(spec: Any, shape: tuple[int, ...], d: int, key: str):
    if isinstance(spec, Mapping):
        unknown = set(spec) - {"const", "slope"}
        if unknown:
            raise ExpressionError(f"{key}: unknown keys {sorted(unknown)}; expected 'const' and optional 'slope'")
        const = np.asarray(spec.get("const", np.zeros(shape)), dtype=np.float64)
        slope = spec.get("slope")
    else:
        const, slope = np.asarray(spec, dtype=np.float64), None
    if const.shape != shape:
        raise ExpressionError(f"{key}: const has shape {const.shape}, expected {shape}")
    if slope is None:
        def constant(t, x):
            return np.broadcast_to(const, (x.shape[0],) + shape)
        return constant
    slope = np.asarray(slope, dtype=np.float64)
    if slope.shape != (d,) + shape:
        raise ExpressionError(f"{key}: slope has shape {slope.shape}, expected {(d,) + shape}")

    def affine(t, x):
        return const + np.tensordot(x, slope, axes=(1, 0))
    return affine


def _expression_list(spec: Any, d: int, d1: int, key: str, allow_state: bool) -> list[Expression]:
    if isinstance(spec, (str, int, float)):
        spec = [spec]
    if not isinstance(spec, (list, tuple)) or len(spec) != d1:
        raise ExpressionError(f"{key}: expected a list of {d1} expressions")
    return [Expression(str(e), d, d1, allow_state=allow_state) for e in spec]


def build_problem(decl: Mapping[str, Any], name: str = "inline", reference=None) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a declarative mapping."""
    known = {"d", "d1", "T", "a", "A", "c", "C", "g", "u0", "lipschitz"}
    unknown = set(decl) - known
    if unknown:
        raise ExpressionError(f"unknown problem keys {sorted(unknown)}")
    for key in ("d", "d1", "T", "u0"):
        if key not in decl:
            raise ExpressionError(f"problem is missing required key '{key}'")
    d, d1, T = int(decl["d"]), int(decl["d1"]), float(decl["T"])
    a = _affine(decl.get("a", np.zeros(d)), (d,), d, "a")
    A = _affine(decl.get("A", np.eye(d)), (d, d), d, "A")
    c = _affine(decl.get("c", np.zeros((d1, d1))), (d1, d1), d, "c")
    C = _affine(decl.get("C", np.zeros((d, d1, d1))), (d, d1, d1), d, "C")
    g_exprs = _expression_list(decl.get("g", ["0"] * d1), d, d1, "g", allow_state=True)
    u0_exprs = _expression_list(decl["u0"], d, d1, "u0", allow_state=False)

    def g(t, x, u, K):
        return np.stack([e(t, x, u, K) for e in g_exprs], axis=1)

    def u0(x):
        return np.stack([e(T, x) for e in u0_exprs], axis=1)

    lip = dict(decl.get("lipschitz") or {})
    bad = set(lip) - set(LipschitzBudget().as_dict())
    if bad:
        raise ExpressionError(f"lipschitz: unknown constants {sorted(bad)}")
    budget = LipschitzBudget(**{k: (None if v is None else float(v)) for k, v in lip.items()})
    return ProblemSpec(
        d=d, d1=d1, T=T, a=a, A=A, c=c, C=C, g=g, u0=u0,
        lipschitz=budget, name=name, reference=reference, declaration=dict(decl),
    )
