"""Run configuration: TOML files validated against a strict schema."""

from __future__ import annotations

import math
import re
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    n: int = Field(79, ge=1)
    m: Optional[int] = Field(None, ge=1, description="points along y; defaults to n")
    dim: Literal[1, 2] = 2
    domain: tuple[float, float] = (0.0, 2 * math.pi)
    bc: Literal["dirichlet", "periodic"] = "dirichlet"

    @model_validator(mode="after")
    def _domain(self):
        if not self.domain[1] > self.domain[0]:
            raise ValueError("domain must be increasing")
        return self


class TimeConfig(_Strict):
    method: Literal["backward_euler", "imex1", "stabilized_imex1", "imex_bdf3"] = "imex1"
    dt: Union[float, str] = "h/6"
    t_end: float = Field(1.0, gt=0)
    s: float = Field(0.0, ge=0)

    @field_validator("dt")
    @classmethod
    def _dt(cls, v):
        if isinstance(v, str):
            parse_dt_rule(v)
        elif not v > 0:
            raise ValueError("dt must be positive")
        return v


class ModelConfig(_Strict):
    kind: Literal["polynomial", "logarithmic", "null"] = "polynomial"
    mu: float = Field(0.01, gt=0)
    epsilon: float = Field(0.05, gt=0)
    theta: float = Field(1.0, gt=0)
    theta_c: float = Field(2.0, gt=0)


class VelocityConfig(_Strict):
    kind: Literal["zero", "shear", "constant", "coupled"] = "zero"
    u: float = 0.0
    v: float = 0.0


class InitialConfig(_Strict):
    kind: Literal["zero", "constant", "sin_y_sin2_x", "shear_layer", "taylor_green", "random"] = "sin_y_sin2_x"
    amplitude: float = 0.75
    rho: float = Field(math.pi / 15, gt=0)
    delta: float = 0.05
    seed: int = 0


class OutputConfig(_Strict):
    snapshot_times: list[float] = Field(default_factory=list)
    snapshot_final: bool = True


class ConvergenceConfig(_Strict):
    grids: list[int] = Field(default_factory=lambda: [19, 39, 79], min_length=2)
    exact: Literal["allen_cahn", "taylor_green"] = "allen_cahn"
    dt_coarse: Optional[float] = Field(None, gt=0, description="defaults to t_end/200")


class SolverConfig(_Strict):
    kind: Literal["direct", "bicgstab"] = "direct"
    rtol: float = Field(1e-10, gt=0, lt=1)


class RunConfig(_Strict):
    problem: Literal["allen_cahn", "convection_diffusion", "vorticity"] = "allen_cahn"
    order: Literal[2, 4] = 4
    grid: GridConfig = GridConfig()
    time: TimeConfig = TimeConfig()
    model: ModelConfig = ModelConfig()
    velocity: VelocityConfig = VelocityConfig()
    initial: InitialConfig = InitialConfig()
    output: OutputConfig = OutputConfig()
    convergence: ConvergenceConfig = ConvergenceConfig()
    solver: SolverConfig = SolverConfig()
    monitors: list[Literal["dmp", "bounds", "telemetry"]] = Field(default_factory=lambda: ["telemetry"])

    @model_validator(mode="after")
    def _consistent(self):
        if self.problem == "vorticity" and self.grid.dim != 2:
            raise ValueError("vorticity runs need a 2D grid")
        if self.velocity.kind == "coupled" and self.problem != "vorticity":
            raise ValueError("coupled velocity only applies to vorticity runs")
        if self.time.s > 0 and self.time.method != "stabilized_imex1":
            raise ValueError("s > 0 requires method = 'stabilized_imex1'")
        return self


_RULE_H = re.compile(r"^\s*h\s*/\s*([0-9.]+)\s*$")
_RULE_CFL = re.compile(r"^\s*h\s*/\s*\(\s*([0-9.]+)\s*\*?\s*u\s*\)\s*$")


def parse_dt_rule(rule: str) -> tuple[str, float]:
    """``"h/6"`` -> ``("h", 6)``; ``"h/(6u)"`` -> ``("cfl", 6)`` (``h/(6 |u|_inf)``)."""
    for kind, pat in (("h", _RULE_H), ("cfl", _RULE_CFL)):
        m = pat.match(rule)
        if m:
            k = float(m.group(1))
            if k <= 0:
                break
            return kind, k
    raise ValueError(f"unrecognised dt rule {rule!r}; use a number, 'h/K' or 'h/(K u)'")


def resolve_dt(dt: float | str, h: float, u_max: float) -> float:
    if not isinstance(dt, str):
        return float(dt)
    kind, k = parse_dt_rule(dt)
    if kind == "h":
        return h / k
    if u_max <= 0:
        raise ValueError("CFL time-step rule needs a nonzero velocity")
    return h / (k * u_max)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return RunConfig.model_validate(data)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Copy with nested overrides, re-validated (``grid={"n": 9}`` merges)."""
    data = cfg.model_dump()
    for key, val in changes.items():
        if val is None:
            continue
        if isinstance(val, dict):
            data[key] = {**data[key], **val}
        else:
            data[key] = val
    return RunConfig.model_validate(data)
