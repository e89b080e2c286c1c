"""JSON run configuration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .mesh import Grid, build_grid
from .model import InitialData, Params
from .solver import NewtonSettings, TimeController, check_scheme


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParamsCfg(_Strict):
    delta: float = Field(ge=0)
    alpha: float = Field(gt=0)
    eps: Literal[0, 1] = 1
    eta: float = Field(default=0.0, ge=0)
    c_boundary: Literal["neumann", "dirichlet0"] = "neumann"


class GridCfg(_Strict):
    kind: Literal["rect", "polar", "radial"]
    resolution: list[int]
    R: float = Field(default=1.0, gt=0)
    bounds: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _shape(self):
        need = {"rect": 2, "polar": 2, "radial": 1}[self.kind]
        if len(self.resolution) != need:
            raise ValueError(f"resolution for {self.kind} grid needs {need} entries")
        return self


class InitCfg(_Strict):
    variant: Literal["experiment1", "experiment3", "experiment4", "bump_sum", "constant", "custom"] = "experiment1"
    bumps: Optional[list[list[float]]] = None
    value: Optional[float] = Field(default=None, ge=0)
    values: Optional[list[float]] = None
    c_value: float = 0.0


class TimeCfg(_Strict):
    T: float = Field(default=1.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    dt_min: float = Field(default=1e-13, gt=0)
    dt_max: Optional[float] = Field(default=None, gt=0)
    growth_guard: float = Field(default=2.0, gt=1)
    shrink: float = Field(default=0.5, gt=0, lt=1)
    grow: float = Field(default=1.2, ge=1)


class NewtonCfg(_Strict):
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=50, ge=1)
    jacobian: Literal["analytic", "fd"] = "analytic"


class OutputsCfg(_Strict):
    diag_csv: str = "diagnostics.csv"
    snapshot_dir: Optional[str] = None
    record_times: Optional[list[float]] = None
    summary_csv: str = "summary.csv"
    fit_csv: Optional[str] = None


class SweepCfg(_Strict):
    error_norm: Literal["l2", "h2"] = "h2"
    n_jobs: int = Field(default=1, ge=1)


class BumpsCfg(_Strict):
    level: float = Field(default=1e-2, gt=0)
    steady_tol: float = Field(default=1e-6, gt=0)
    T_max: float = Field(default=50.0, gt=0)
    n_jobs: int = Field(default=1, ge=1)


class Config(_Strict):
    scheme: Literal["pp", "pe", "log"]
    params: ParamsCfg
    grid: GridCfg
    init: InitCfg = InitCfg()
    time: TimeCfg = TimeCfg()
    newton: NewtonCfg = NewtonCfg()
    outputs: OutputsCfg = OutputsCfg()
    sweep: SweepCfg = SweepCfg()
    bumps: BumpsCfg = BumpsCfg()

    # -- conversions -------------------------------------------------------

    def to_params(self) -> Params:
        return Params(**self.params.model_dump())

    def to_grid(self) -> Grid:
        g = self.grid
        return build_grid(g.kind, g.resolution, R=g.R, bounds=g.bounds)

    def to_init(self) -> InitialData:
        i = self.init
        if i.variant == "experiment1":
            return InitialData.experiment1()
        if i.variant == "experiment3":
            return InitialData.experiment3()
        if i.variant == "experiment4":
            return InitialData.experiment4()
        if i.variant == "bump_sum":
            return InitialData.bump_sum(i.bumps or [])
        if i.variant == "constant":
            return InitialData.constant(1.0 if i.value is None else i.value, i.c_value)
        return InitialData.custom(i.values or [], i.c_value)

    def to_controller(self) -> TimeController:
        t = self.time
        dt_max = t.dt if t.dt_max is None else t.dt_max
        return TimeController(dt=t.dt, dt_min=t.dt_min, dt_max=dt_max, shrink=t.shrink,
                              grow=t.grow, growth_guard=t.growth_guard)

    def to_newton(self) -> NewtonSettings:
        n = self.newton
        return NewtonSettings(tol_residual=n.tol, max_iter=n.max_iter, jacobian=n.jacobian)


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str) -> Config:
    """Parse and validate a JSON configuration document.

    Raises :class:`ConfigError` naming the offending key.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>: configuration must be a JSON object")
    try:
        cfg = Config.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    # cross-field checks that need the domain objects
    try:
        cfg.to_params()
        cfg.to_grid()
        cfg.to_controller()
        init = cfg.to_init()
    except ValueError as exc:
        raise ConfigError(f"{_guess_key(str(exc))}: {exc}") from None
    try:
        check_scheme(cfg.scheme, cfg.to_params())
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from None
    if init.variant == "custom" and len(init.values or ()) != cfg.to_grid().n_cells:
        raise ConfigError("init.values: length must equal the number of grid cells")
    return cfg


def _guess_key(msg: str) -> str:
    for key in ("nx", "ny", "nr", "ntheta", "R", "bounds"):
        if msg.startswith(key) or f" {key} " in msg:
            return "grid"
    if "dt" in msg:
        return "time"
    if "bump" in msg or "density" in msg or "custom" in msg:
        return "init"
    return "params"


def load_config(path: str | Path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))
