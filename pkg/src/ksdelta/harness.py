"""Experiment orchestration: single runs, delta sweeps, blow-up probes and
the steady bump-scaling study."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .diagnostics import DiagRecord, diag_record, h2_distance, l2_distance, level_set_radius
from .mesh import Grid
from .model import InitialData, Params, State
from .solver import NewtonSettings, Scheme, Source, TimeController, advance, consistent_state

log = logging.getLogger(__name__)

_T_EPS = 1e-12


@dataclass
class RunResult:
    records: list[DiagRecord]
    snapshots: list[State]
    final: State
    status: Literal["completed", "breakdown", "steady"]
    final_dt: float
    message: str = ""
    n_steps: int = 0
    t_steady: float | None = None

    @property
    def broke_down(self) -> bool:
        return self.status == "breakdown"


def steady_metric(new: State, old: State, dt: float) -> float:
    """``||rho_new - rho_old||_inf / dt`` relative to ``max rho_new``."""
    return float(np.max(np.abs(new.rho.values - old.rho.values)) / dt / np.max(new.rho.values))


def run(
    p: Params,
    init: InitialData | State,
    T: float,
    grid: Grid | None = None,
    record_times: Sequence[float] = (),
    scheme: Scheme = "pp",
    ctrl: TimeController | None = None,
    newton: NewtonSettings = NewtonSettings(),
    source: Source | None = None,
    steady_tol: float | None = None,
    stop_at_steady: bool = False,
    keep_every_step: bool = False,
    on_step: Callable[[State, State, float], None] | None = None,
) -> RunResult:
    """Integrate from ``t = 0`` (or the given state) to ``T``.

    A diagnostics record is taken after every accepted step; snapshots are
    taken at ``record_times`` (steps are shortened to land on them) or after
    every step with ``keep_every_step``. With ``steady_tol`` the first time
    the relative time-derivative drops below it is reported in
    ``t_steady``; ``stop_at_steady`` ends the run there.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if isinstance(init, State):
        state = init
    else:
        if grid is None:
            raise ValueError("a grid is required when starting from InitialData")
        state = init.state(grid)
    state = consistent_state(state, p)
    ctrl = ctrl or TimeController()
    targets = sorted({float(t) for t in record_times if 0 < t <= T} | {float(T)})
    pending = [t for t in targets if t < T] if record_times else []
    snapshots: list[State] = [state] if (keep_every_step or 0.0 in record_times) else []
    records: list[DiagRecord] = []
    t_steady = None
    n = 0
    while state.t < T * (1 - _T_EPS):
        nxt = next((t for t in targets if t > state.t * (1 + _T_EPS) + _T_EPS * T), T)
        out = advance(state, ctrl, p, scheme, newton, source, max_dt=nxt - state.t)
        if out.status == "breakdown":
            log.info("breakdown at t=%.6g: %s", state.t, out.message)
            return RunResult(records, snapshots, state, "breakdown", out.dt, out.message, n, t_steady)
        new = out.new_state
        if abs(new.t - nxt) <= _T_EPS * max(1.0, T):
            new = State(new.rho, new.c, nxt)
        records.append(diag_record(new, state, out.dt, p, out.clamped))
        if on_step is not None:
            on_step(new, state, out.dt)
        if keep_every_step or (pending and abs(new.t - pending[0]) <= _T_EPS * max(1.0, T)):
            snapshots.append(new)
            if pending and abs(new.t - pending[0]) <= _T_EPS * max(1.0, T):
                pending.pop(0)
        if steady_tol is not None and t_steady is None and steady_metric(new, state, out.dt) < steady_tol:
            t_steady = new.t
            if stop_at_steady:
                return RunResult(records, snapshots, new, "steady", out.dt, "", n + 1, t_steady)
        state = new
        ctrl = ctrl.with_dt(out.next_dt)
        n += 1
    if record_times and T in record_times and (not snapshots or snapshots[-1] is not state):
        snapshots.append(state)
    return RunResult(records, snapshots, state, "completed", ctrl.dt, "", n, t_steady)


# -- power laws --------------------------------------------------------------


def fit_power_law(xs, ys) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log x`` and its r^2."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("power-law fit needs at least two distinct x values")
    slope, intercept = np.polyfit(lx, ly, 1)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - (slope * lx + intercept)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    if abs(slope) < 1e-14:
        slope = 0.0
    return float(slope), float(r2)


# -- delta sweep -------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """Fixed-step delta sweep against the delta=0 reference.

    ``record_times=None`` compares at every time step.
    """

    deltas: tuple[float, ...]
    base: Params
    T: float
    grid: Grid
    dt: float = 1e-4
    init: InitialData = field(default_factory=InitialData.experiment1)
    scheme: Scheme | None = None
    record_times: tuple[float, ...] | None = None
    error_norm: Literal["l2", "h2"] = "h2"
    newton: NewtonSettings = NewtonSettings()

    def __post_init__(self):
        ds = tuple(sorted((float(d) for d in self.deltas), reverse=True))
        if len(ds) < 2 or len(set(ds)) < 2:
            raise ValueError("at least two distinct deltas required")
        if ds[-1] <= 0:
            raise ValueError("sweep deltas must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.error_norm not in ("l2", "h2"):
            raise ValueError(f"unknown error_norm {self.error_norm!r}")
        object.__setattr__(self, "deltas", ds)

    @property
    def run_scheme(self) -> Scheme:
        return self.scheme or ("pp" if self.base.eps == 1 else "pe")

    @property
    def reference_scheme(self) -> Scheme:
        return "pp" if self.base.eps == 1 else "pe"


@dataclass
class SweepResult:
    deltas: list[float]
    errors: list[float]
    valid: list[bool]
    fitted_exponent: float
    fit_r2: float
    messages: list[str] = field(default_factory=list)

    @property
    def poor_fit(self) -> bool:
        return not self.fit_r2 >= 0.95


def _fixed_step_trajectory(p: Params, init: InitialData, grid: Grid, T: float, dt: float,
                           scheme: Scheme, newton: NewtonSettings):
    n = int(round(T / dt))
    res = run(p, init, n * dt, grid=grid, scheme=scheme, ctrl=TimeController.fixed(dt),
              newton=newton, keep_every_step=True)
    return res


def _sweep_member(args):
    spec, delta = args
    p = spec.base.replace(delta=delta)
    scheme = spec.run_scheme if delta > 0 else spec.reference_scheme
    res = _fixed_step_trajectory(p, spec.init, spec.grid, spec.T, spec.dt, scheme, spec.newton)
    return res.status, res.message, res.snapshots


def _sweep_error(spec: SweepSpec, traj: list[State], ref: list[State]) -> float:
    dist = h2_distance if spec.error_norm == "h2" else l2_distance
    include_c = spec.base.eps == 1
    if spec.record_times is None:
        pairs = zip(traj, ref)
    else:
        wanted = [round(t / spec.dt) for t in spec.record_times]
        pairs = ((traj[k], ref[k]) for k in wanted if 0 <= k < len(traj))
    return max(dist(a, b, include_c) for a, b in pairs)


def delta_sweep(spec: SweepSpec, n_jobs: int = 1) -> SweepResult:
    """Errors ``E(delta)`` against the delta=0 reference and their power-law fit.

    Every run uses the same grid and the same fixed time partition. A run
    that breaks down is reported and left out of the fit.
    """
    jobs = [(spec, 0.0)] + [(spec, d) for d in spec.deltas]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            outs = list(ex.map(_sweep_member, jobs))
    else:
        outs = [_sweep_member(j) for j in jobs]
    ref_status, ref_msg, ref = outs[0]
    if ref_status != "completed":
        raise RuntimeError(f"reference run broke down: {ref_msg}")
    errors, valid, msgs = [], [], []
    for (status, msg, traj), d in zip(outs[1:], spec.deltas):
        ok = status == "completed"
        errors.append(_sweep_error(spec, traj, ref) if ok else math.nan)
        valid.append(ok and errors[-1] > 0 and math.isfinite(errors[-1]))
        msgs.append(msg)
    xs = [d for d, ok in zip(spec.deltas, valid) if ok]
    ys = [e for e, ok in zip(errors, valid) if ok]
    if len(xs) >= 2:
        slope, r2 = fit_power_law(xs, ys)
    else:
        slope, r2 = math.nan, math.nan
    return SweepResult(list(spec.deltas), errors, valid, slope, r2, msgs)


# -- blow-up -----------------------------------------------------------------


@dataclass
class BlowupReport:
    alpha: float
    delta: float
    T_break: float
    final_dt: float
    final_linf: float
    breakdown: bool
    n_steps: int = 0


def blowup_probe(
    p: Params,
    init: InitialData,
    T_cap: float,
    grid: Grid,
    scheme: Scheme = "pp",
    ctrl: TimeController | None = None,
    newton: NewtonSettings = NewtonSettings(),
) -> BlowupReport:
    """Run until the step controller gives up or ``T_cap`` is reached.

    ``T_break`` is ``inf`` when no breakdown happened before ``T_cap``.
    """
    ctrl = ctrl or TimeController(dt=1e-4, dt_max=1e-3)
    res = run(p, init, T_cap, grid=grid, scheme=scheme, ctrl=ctrl, newton=newton)
    linf = float(np.max(np.abs(res.final.rho.values)))
    return BlowupReport(
        alpha=p.alpha,
        delta=p.delta,
        T_break=res.final.t if res.broke_down else math.inf,
        final_dt=res.final_dt,
        final_linf=linf,
        breakdown=res.broke_down,
        n_steps=res.n_steps,
    )


# -- bump study --------------------------------------------------------------


@dataclass
class BumpRow:
    delta: float
    radius: float
    rho_max: float
    t_steady: float
    steady_residual: float
    converged: bool


@dataclass
class BumpReport:
    rows: list[BumpRow]
    a: float
    a_r2: float
    b: float
    b_r2: float
    level: float = 1e-2

    @property
    def poor_fit(self) -> bool:
        return not (self.a_r2 >= 0.95 and self.b_r2 >= 0.95)


def _bump_member(args) -> BumpRow:
    p, init, grid, scheme, ctrl, newton, level, steady_tol, T_max = args
    last = {"metric": math.inf}

    def track(new, old, dt):
        last["metric"] = steady_metric(new, old, dt)

    res = run(p, init, T_max, grid=grid, scheme=scheme, ctrl=ctrl, newton=newton,
              steady_tol=steady_tol, stop_at_steady=True, on_step=track)
    rho = res.final.rho
    return BumpRow(
        delta=p.delta,
        radius=level_set_radius(rho, level),
        rho_max=float(np.max(rho.values)),
        t_steady=res.final.t,
        steady_residual=last["metric"],
        converged=res.status == "steady",
    )


def bump_study(
    deltas: Sequence[float],
    p_base: Params,
    grid: Grid,
    init: InitialData | None = None,
    scheme: Scheme = "pp",
    ctrl: TimeController | None = None,
    newton: NewtonSettings = NewtonSettings(),
    level: float = 1e-2,
    steady_tol: float = 1e-6,
    T_max: float = 50.0,
    n_jobs: int = 1,
) -> BumpReport:
    """Steady bump radius (at ``level``) and height as functions of delta.

    Each delta is integrated until ``||rho_new - rho_old||_inf / dt`` falls
    below ``steady_tol * max(rho)``. Returned exponents follow
    ``radius ~ delta^a`` and ``rho_max ~ delta^-b``.
    """
    if grid.kind != "radial":
        raise ValueError("bump_study runs on a radial grid")
    if p_base.c_boundary != "dirichlet0":
        raise ValueError("bump_study expects homogeneous Dirichlet data for c")
    if len(set(deltas)) < 2:
        raise ValueError("at least two distinct deltas required")
    init = init or InitialData.experiment4()
    ctrl = ctrl or TimeController(dt=1e-5, dt_max=5e-2)
    jobs = [(p_base.replace(delta=float(d)), init, grid, scheme, ctrl, newton, level, steady_tol, T_max)
            for d in deltas]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(_bump_member, jobs))
    else:
        rows = [_bump_member(j) for j in jobs]
    ds = [r.delta for r in rows]
    a, a_r2 = fit_power_law(ds, [r.radius for r in rows])
    mb, b_r2 = fit_power_law(ds, [r.rho_max for r in rows])
    return BumpReport(rows, a, a_r2, -mb, b_r2, level)
