"""YAML run configuration, validated with pydantic before any numeric work."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .levy_model import LevyModel
from .mc_oracle import PathConfig
from .piecewise import PayoffFn, PiecewiseLinear

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "dump_config"]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LevySpec(_Strict):
    drift: float
    volatility: float = 0.0
    jump_rate: float = 0.0
    jump_weights: list[float] = Field(default_factory=list)
    jump_rates: list[float] = Field(default_factory=list)

    def build(self) -> LevyModel:
        return LevyModel(self.drift, self.volatility, self.jump_rate, tuple(self.jump_weights), tuple(self.jump_rates))


class CurveSpec(_Strict):
    """Piecewise-linear function through (knots, values), affine past the last knot."""

    knots: list[float] = Field(default_factory=lambda: [0.0])
    values: list[float] = Field(default_factory=lambda: [0.0])
    terminal_slope: float = 0.0

    @model_validator(mode="after")
    def _shape(self):
        if len(self.knots) != len(self.values) or not self.knots:
            raise ValueError("knots and values must be nonempty and of equal length")
        return self

    def payoff(self, beta: float) -> PayoffFn:
        return PayoffFn(self.knots, self.values, terminal_slope=self.terminal_slope, beta=beta)


class StepSpec(_Strict):
    """values[i] + slopes[i]·(x − knots[i]) on [knots[i], knots[i+1]); jumps allowed."""

    knots: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    values: list[float] = Field(default_factory=lambda: [1.0, 0.0])
    slopes: list[float] = Field(default_factory=lambda: [0.0, 0.0])

    def function(self) -> PiecewiseLinear:
        return PiecewiseLinear(np.array(self.knots), np.array(self.values), np.array(self.slopes))


class AuxSpec(_Strict):
    model: LevySpec
    q: float
    lam: float = 0.0
    r: float
    beta: float
    payoff: CurveSpec = Field(default_factory=CurveSpec)

    def build(self):
        from .aux_solver import AuxProblem

        return AuxProblem(self.model.build(), self.q, self.lam, self.r, self.beta, self.payoff.payoff(self.beta))


class StateSpec(_Strict):
    model: LevySpec
    q: float


class SwitchJumpSpec(_Strict):
    source: int
    target: int
    kind: Literal["zero", "exponential", "discrete"] = "zero"
    rate: float | None = None
    sizes: list[float] = Field(default_factory=list)
    probs: list[float] = Field(default_factory=list)


class RegimeSpec(_Strict):
    generator: list[list[float]]
    states: list[StateSpec]
    r: float
    beta: float
    switch_jumps: list[SwitchJumpSpec] = Field(default_factory=list)

    def build(self):
        from .regime_solver import RegimeModel, SwitchJump

        jumps = {
            (s.source, s.target): SwitchJump(s.kind, s.rate, tuple(s.sizes), tuple(s.probs))
            for s in self.switch_jumps
        }
        return RegimeModel(
            np.array(self.generator, dtype=float),
            tuple(st.model.build() for st in self.states),
            tuple(st.q for st in self.states),
            self.r,
            self.beta,
            jumps,
        )


class SolverSettings(_Strict):
    grid_points: int = Field(2000, ge=10)
    x_max: float | None = None
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(500, ge=1)
    table_points: int = Field(201, ge=2)


class OracleSettings(_Strict):
    n_paths: int = Field(200_000, ge=2)
    seed: int = Field(20240611, ge=0, lt=2**64)
    dt: float | None = Field(None, gt=0)
    antithetic: bool = False
    points: list[float] | None = None
    test_function: StepSpec = Field(default_factory=StepSpec)

    def path_config(self, **overrides) -> PathConfig:
        kw = dict(n_paths=self.n_paths, seed=self.seed, dt=self.dt, antithetic=self.antithetic)
        kw.update(overrides)
        return PathConfig(**kw)


class OutputSettings(_Strict):
    dir: str = "out"


class RunConfig(_Strict):
    problem: Literal["aux", "regime"]
    aux: AuxSpec | None = None
    regime: RegimeSpec | None = None
    solver: SolverSettings = Field(default_factory=SolverSettings)
    oracle: OracleSettings = Field(default_factory=OracleSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)

    @model_validator(mode="after")
    def _sections(self):
        if self.problem == "aux" and self.aux is None:
            raise ValueError("problem 'aux' needs an 'aux' section")
        if self.problem == "regime" and self.regime is None:
            raise ValueError("problem 'regime' needs a 'regime' section")
        if self.aux is not None and self.regime is not None:
            raise ValueError("give either an 'aux' or a 'regime' section, not both")
        return self

    def build(self):
        """The validated AuxProblem or RegimeModel."""
        return self.aux.build() if self.problem == "aux" else self.regime.build()


def _format(err) -> str:
    loc = ".".join(str(p) for p in err["loc"]) or "<root>"
    return f"{loc}: {err['msg']}"


def parse_config(data: dict) -> RunConfig:
    """Schema check and then every model assumption, each with its own message."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([_format(e) for e in exc.errors()]) from None
    errors = _assumption_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _assumption_errors(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.problem == "aux":
        a = cfg.aux
        if not a.beta > 1:
            errors.append("aux.beta: β must exceed 1")
        try:
            a.model.build()
        except ValueError as exc:
            errors.append(f"aux.model: {exc}")
        if not errors:
            try:
                a.build()
            except ValueError as exc:
                errors.append(f"aux: {exc}")
        return errors
    g = cfg.regime
    if not g.beta > 1:
        errors.append("regime.beta: β must exceed 1")
    n = len(g.states)
    if any(len(row) != n for row in g.generator) or len(g.generator) != n:
        errors.append(f"regime.generator: must be {n}×{n} to match the states")
        return errors
    for k, row in enumerate(g.generator):
        total = sum(row)
        if abs(total) > 1e-10 * (1 + sum(abs(v) for v in row)):
            errors.append(f"regime.generator[{k}]: row sums to {total:.6g}, not 0")
        if any(v < 0 for j, v in enumerate(row) if j != k):
            errors.append(f"regime.generator[{k}]: off-diagonal rates must be nonnegative")
    for k, st in enumerate(g.states):
        try:
            st.model.build()
        except ValueError as exc:
            errors.append(f"regime.states[{k}].model: {exc}")
        if not st.q > 0:
            errors.append(f"regime.states[{k}].q: discount must be positive")
    if not errors:
        try:
            g.build()
        except ValueError as exc:
            errors.append(f"regime: {exc}")
    return errors


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([str(exc)]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
