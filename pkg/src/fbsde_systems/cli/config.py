"""YAML run configuration.

Example::

    job: evaluate            # evaluate | grid | convergence | compare | scalar-crosscheck | validate
    problem: heat-1d         # catalog name or an inline declaration
    start: {s: 0.0, x: [0.0]}
    solver: {N: 50, M: 100000}
    output: heat.csv

Job-specific blocks: ``grid`` (``s`` and one list of coordinates per
dimension; the rectangular product is evaluated), ``refinements`` (list of
solver overrides, at least two), ``compare`` (``other`` problem, ``n_seeds``,
``c31_samples``), ``scalar`` (``directions`` or ``n_random``,
``launch_spread``) and ``validate`` (``sample_count``, ``box``).
"""

from __future__ import annotations

from typing import Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from ..bsde import SolverConfig
from ..catalog import NAMES, catalog
from ..declarative import build_problem
from ..errors import CatalogError, ConfigError, ExpressionError
from ..problem import ProblemSpec

JOB_KINDS = ("evaluate", "grid", "convergence", "compare", "scalar-crosscheck", "validate")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InlineProblem(_Strict):
    d: int = Field(ge=1)
    d1: int = Field(ge=1)
    T: float = Field(gt=0)
    a: Any = None
    A: Any = None
    c: Any = None
    C: Any = None
    g: list[str] | None = None
    u0: list[str]
    lipschitz: dict[str, float | None] | None = None

    def declaration(self) -> dict[str, Any]:
        return self.model_dump(exclude_none=True)


ProblemRef = Union[str, InlineProblem]


class SolverBlock(_Strict):
    N: int = Field(100, ge=1)
    M: int = Field(20000, ge=1)
    seed: int = Field(1234, ge=0, lt=2**64)
    picard_max: int = Field(30, ge=1)
    picard_tol: float = Field(1e-4, gt=0)
    beta: float | None = Field(None, ge=0)
    basis_degree: int = Field(2, ge=0)
    basis_state: Literal["auto", "xi_only", "xi_and_gamma", "joint"] = "auto"
    ridge: float = Field(1e-10, ge=0)

    def to_config(self, seed: int | None = None) -> SolverConfig:
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        return SolverConfig(**data)


class Refinement(_Strict):
    N: int | None = Field(None, ge=1)
    M: int | None = Field(None, ge=1)
    basis_degree: int | None = Field(None, ge=0)


class Start(_Strict):
    s: float = 0.0
    x: list[float]


class Grid(_Strict):
    s: float = 0.0
    x: list[list[float]]

    @field_validator("x")
    @classmethod
    def _non_empty(cls, v):
        if not v or any(len(axis) == 0 for axis in v):
            raise ValueError("every grid axis needs at least one coordinate")
        return v


class CompareBlock(_Strict):
    other: ProblemRef
    n_seeds: int = Field(20, ge=1)
    c31_samples: int = Field(500, ge=1)


class ScalarBlock(_Strict):
    directions: list[list[float]] | None = None
    n_random: int = Field(5, ge=1)
    launch_spread: float = Field(1.0, ge=0)


class ValidateBlock(_Strict):
    sample_count: int = Field(1000, ge=2)
    box: float = Field(10.0, gt=0)


class RunConfig(_Strict):
    job: Literal["evaluate", "grid", "convergence", "compare", "scalar-crosscheck", "validate"]
    problem: ProblemRef
    start: Start | None = None
    grid: Grid | None = None
    solver: SolverBlock = Field(default_factory=SolverBlock)
    refinements: list[Refinement] | None = None
    compare: CompareBlock | None = None
    scalar: ScalarBlock | None = None
    validate_: ValidateBlock | None = Field(None, alias="validate")
    output: str | None = None
    seed: int | None = Field(None, ge=0, lt=2**64)
    threads: int | None = Field(None, ge=1)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    _specs: list[ProblemSpec] = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def _job_blocks(self):
        job = self.job
        if job in ("evaluate", "convergence", "compare", "scalar-crosscheck") and self.start is None:
            raise ValueError(f"{job} jobs require a 'start' block with s and x")
        if job == "grid" and self.grid is None:
            raise ValueError("grid jobs require a 'grid' block")
        if job == "convergence" and (self.refinements is None or len(self.refinements) < 2):
            raise ValueError("convergence jobs require at least 2 entries in 'refinements'")
        if job == "compare" and self.compare is None:
            raise ValueError("compare jobs require a 'compare' block naming the 'other' problem")
        specs = [_resolve(self.problem, "problem")]
        if self.compare is not None:
            specs.append(_resolve(self.compare.other, "compare.other"))
            if (specs[0].d, specs[0].d1, specs[0].T) != (specs[1].d, specs[1].d1, specs[1].T):
                raise ValueError("compare.other must share d, d1 and T with problem")
        d = specs[0].d
        if self.start is not None and len(self.start.x) != d:
            raise ValueError(f"start.x must have {d} coordinates")
        if self.grid is not None and len(self.grid.x) != d:
            raise ValueError(f"grid.x must have one axis per dimension ({d})")
        if self.scalar is not None and self.scalar.directions is not None:
            for h in self.scalar.directions:
                if len(h) != specs[0].d1:
                    raise ValueError(f"scalar.directions entries must have {specs[0].d1} components")
        self._specs = specs
        return self

    @property
    def problems(self) -> list[ProblemSpec]:
        return list(self._specs)

    def solver_config(self, seed: int | None = None) -> SolverConfig:
        if seed is None:
            seed = self.seed
        return self.solver.to_config(seed)

    def dump(self) -> dict[str, Any]:
        return self.model_dump(by_alias=True, exclude_none=True)


def _resolve(ref: ProblemRef, where: str) -> ProblemSpec:
    if isinstance(ref, str):
        try:
            return catalog(ref)
        except CatalogError:
            raise ValueError(f"{where}: unknown catalog entry {ref!r}; available: {', '.join(NAMES)}") from None
    try:
        return build_problem(ref.declaration(), name="inline")
    except ExpressionError as exc:
        raise ValueError(f"{where}: {exc}") from None


def _format_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err["loc"] if not str(p).startswith("function-after"))
    where = f" at '{loc}'" if loc else ""
    msg = str(err["msg"]).removeprefix("Value error, ")
    return f"invalid config{where}: {msg}"


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    return config_from_mapping(data)


def config_from_mapping(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
