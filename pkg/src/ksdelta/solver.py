"""Implicit Euler steppers with Newton linearization.

Three formulations are provided:

``pp``
    parabolic-parabolic system in ``(rho, c)``, fully coupled.
``pe``
    parabolic-elliptic system rewritten in ``(rho, v)`` with ``v = c + delta rho``;
    ``c`` is recovered after each step.
``log``
    the same fluxes written in ``w = delta log rho`` so that ``rho = exp(w / delta)``
    stays positive; the second unknown is ``c`` (eps=1) or ``v`` (eps=0).
    The drift uses ``exp(w / delta)`` averaged along each face segment (the
    logarithmic mean of the two densities), so that ``rho grad log rho``
    equals ``grad rho`` on every face and the entropy estimate carries over.

All residuals are per unit cell measure and in "divided by dt" form, i.e. for
constant fields they reduce to the ODE residuals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Field, Grid
from .model import Params, State, signal_production, signal_production_derivative

log = logging.getLogger(__name__)

Scheme = Literal["pp", "pe", "log"]
Source = Callable[[float], tuple[np.ndarray, np.ndarray]]

LOG_OVERFLOW = 700.0
_RHO_FLOOR = 1e-300


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonSettings:
    tol_residual: float = 1e-10
    max_iter: int = 50
    jacobian: Literal["analytic", "fd"] = "analytic"

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    n_iter: int
    residual_norm: float
    message: str = ""


@dataclass(frozen=True)
class TimeController:
    dt: float = 1e-3
    dt_min: float = 1e-13
    dt_max: float = 1e-3
    shrink: float = 0.5
    grow: float = 1.2
    growth_guard: float = 2.0

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt <= self.dt_max):
            raise ValueError(
                f"need 0 < dt_min <= dt <= dt_max, got {self.dt_min}, {self.dt}, {self.dt_max}"
            )
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if not self.grow >= 1:
            raise ValueError("grow must be >= 1")
        if not self.growth_guard > 1:
            raise ValueError("growth_guard must be > 1")

    @classmethod
    def fixed(cls, dt: float) -> "TimeController":
        """Constant step; any rejection is reported as breakdown."""
        return cls(dt=dt, dt_min=dt, dt_max=dt, grow=1.0, growth_guard=math.inf)

    def with_dt(self, dt: float) -> "TimeController":
        return replace(self, dt=dt)


@dataclass
class StepOutcome:
    status: Literal["accepted", "retry_smaller_dt", "breakdown"]
    new_state: State | None = None
    newton_iters: int = 0
    dt: float = 0.0
    next_dt: float = 0.0
    retries: int = 0
    clamped: bool = False
    message: str = ""


# -- linear algebra ----------------------------------------------------------


def linear_solve(A, b, rtol: float | None = 1e-12, refine: int = 2) -> np.ndarray:
    """Sparse direct solve with iterative refinement.

    Raises :class:`LinearSolveError` on structural or numerical singularity,
    or when ``||Ax - b|| / ||b||`` stays above ``rtol``.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise LinearSolveError(f"shape mismatch: A is {A.shape}, b has {b.size} entries")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise LinearSolveError(str(exc)) from exc
    x = lu.solve(b)
    bnorm = np.linalg.norm(b)
    for _ in range(refine):
        r = b - A @ x
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("non-finite solution (numerically singular matrix)")
        if bnorm == 0 or np.linalg.norm(r) <= 1e-15 * bnorm:
            break
        x = x + lu.solve(r)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("non-finite solution (numerically singular matrix)")
    if rtol is not None and bnorm > 0:
        rel = np.linalg.norm(b - A @ x) / bnorm
        if rel > rtol:
            raise LinearSolveError(f"relative residual {rel:.3e} exceeds {rtol:.1e}")
    return x


def fd_jacobian(residual: Callable[[np.ndarray], np.ndarray], x: np.ndarray, r0=None) -> np.ndarray:
    """Forward-difference Jacobian, one column per unknown."""
    x = np.asarray(x, dtype=float)
    r0 = residual(x) if r0 is None else r0
    J = np.empty((r0.size, x.size))
    sq = math.sqrt(np.finfo(float).eps)
    for k in range(x.size):
        h = sq * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += h
        J[:, k] = (residual(xp) - r0) / (xp[k] - x[k])
    return J


def newton(
    residual: Callable[[np.ndarray], np.ndarray],
    guess,
    settings: NewtonSettings = NewtonSettings(),
    jacobian: Callable[[np.ndarray], object] | None = None,
    accept: Callable[[np.ndarray, np.ndarray], bool] | None = None,
) -> NewtonResult:
    """Undamped Newton iteration until ``max|r| <= tol_residual``.

    ``accept(x, r)`` can veto convergence at the tolerance; it is ignored
    once the residual is a further factor 1e-3 below tolerance. Never
    raises on numerical trouble; failures come back with ``converged=False``
    and a message.
    """
    x = np.array(guess, dtype=float)
    use_fd = settings.jacobian == "fd" or jacobian is None
    rnorm = math.inf
    for it in range(settings.max_iter + 1):
        try:
            with np.errstate(over="raise", invalid="raise"):
                r = np.asarray(residual(x), dtype=float)
        except (FloatingPointError, OverflowError) as exc:
            return NewtonResult(x, False, it, math.inf, f"residual evaluation failed: {exc}")
        if not np.all(np.isfinite(r)):
            return NewtonResult(x, False, it, math.inf, "non-finite residual")
        rnorm = float(np.max(np.abs(r))) if r.size else 0.0
        if rnorm <= settings.tol_residual and (
            accept is None or rnorm <= 1e-3 * settings.tol_residual or accept(x, r)
        ):
            return NewtonResult(x, True, it, rnorm)
        if it == settings.max_iter:
            break
        try:
            with np.errstate(over="raise", invalid="raise"):
                J = fd_jacobian(residual, x, r) if use_fd else jacobian(x)
            dx = linear_solve(J, -r, rtol=None)
        except (LinearSolveError, FloatingPointError, OverflowError) as exc:
            return NewtonResult(x, False, it, rnorm, f"linear solve failed: {exc}")
        x = x + dx
    return NewtonResult(x, False, settings.max_iter, rnorm, "max_iter exceeded")


# -- discrete systems --------------------------------------------------------


class _Ops:
    """Sparse operators needed by the Jacobians of one grid."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.D = grid.diff_matrix
        self.A = grid.mean_matrix
        self.T = grid.transmissibility
        self.Div = grid.div_matrix
        self.LN = grid.laplacian_matrix("neumann")
        self.I = sp.identity(grid.n_cells, format="csr")
        self.LL = (self.LN @ self.LN).tocsr()

    def drift_terms(self, rho, phi, delta, need_jac=True, face_rho=None):
        """Per-unit-measure ``div((1 + delta rho) grad rho - rho grad phi)``
        and its derivatives with respect to ``rho`` and ``phi``.

        ``face_rho=(values, jac)`` replaces the arithmetic face mean in the
        drift; the derivative through ``jac`` is then returned as a fourth
        item instead of being folded into the ``rho`` derivative.
        """
        D, A, T = self.D, self.A, self.T
        Drho, Dphi, Arho = D @ rho, D @ phi, A @ rho
        d_face = 1.0 + delta * Arho
        rho_face = Arho if face_rho is None else face_rho[0]
        flux = T * (d_face * Drho - rho_face * Dphi)
        if not need_jac:
            return self.Div @ flux, None, None, None
        if face_rho is None:
            dF_drho = sp.diags(T * d_face) @ D + sp.diags(T * (delta * Drho - Dphi)) @ A
            dF_face = None
        else:
            dF_drho = sp.diags(T * d_face) @ D + sp.diags(T * delta * Drho) @ A
            dF_face = self.Div @ (sp.diags(-T * Dphi) @ face_rho[1])
        dF_dphi = sp.diags(-T * rho_face) @ D
        return self.Div @ flux, self.Div @ dF_drho, self.Div @ dF_dphi, dF_face

    def log_mean_face(self, w, delta, need_jac=True):
        """Face average of ``exp(w / delta)`` along a linear profile of ``w``,
        i.e. the logarithmic mean of the adjacent densities, and its
        derivative with respect to ``w``."""
        g = self.grid
        a, b = w[g.face_i] / delta, w[g.face_j] / delta
        ea, eb = np.exp(a), np.exp(b)
        s = b - a
        small = np.abs(s) < 1e-2
        ss = np.where(small, 1.0, s)
        lm = np.where(small, 0.0, (eb - ea) / ss)
        # series in s about a, accurate to ~1e-16 for |s| < 1e-2
        sm = s[small]
        lm[small] = ea[small] * (1 + sm / 2 + sm**2 / 6 + sm**3 / 24 + sm**4 / 120 + sm**5 / 720)
        if not need_jac:
            return lm, None
        d_b = np.where(small, 0.0, (eb - lm) / ss)
        d_a = np.where(small, 0.0, (lm - ea) / ss)
        d_b[small] = ea[small] * (0.5 + sm / 3 + sm**2 / 8 + sm**3 / 30 + sm**4 / 144)
        d_a[small] = ea[small] * (0.5 + sm / 6 + sm**2 / 24 + sm**3 / 120 + sm**4 / 720)
        nf, n = g.n_faces, g.n_cells
        rows = np.concatenate([np.arange(nf), np.arange(nf)])
        cols = np.concatenate([g.face_i, g.face_j])
        jac = sp.csr_matrix((np.concatenate([d_a, d_b]) / delta, (rows, cols)), shape=(nf, n))
        return lm, jac

    def eta_terms(self, w, rho, delta, need_jac=True):
        """``L L w - delta^-2 div(|grad w|^2 grad w) + w rho`` and its
        derivative in ``w`` (``rho = exp(w / delta)``)."""
        g = self.grid
        LL = self.LL
        grad = (self.D @ w) / g.face_dist
        cubic = self.Div @ (g.face_area * grad**3)
        val = LL @ w - cubic / delta**2 + w * rho
        if not need_jac:
            return val, None
        dcubic = self.Div @ sp.diags(3 * g.face_area * grad**2 / g.face_dist) @ self.D
        jac = LL - dcubic / delta**2 + sp.diags(rho + w * rho / delta)
        return val, jac


_OPS_CACHE: dict[int, tuple[Grid, _Ops]] = {}


def _ops(grid: Grid) -> _Ops:
    hit = _OPS_CACHE.get(id(grid))
    if hit is None or hit[0] is not grid:
        if len(_OPS_CACHE) > 32:
            _OPS_CACHE.clear()
        hit = (grid, _Ops(grid))
        _OPS_CACHE[id(grid)] = hit
    return hit[1]


def _rho_of_w(w, delta):
    s = np.asarray(w) / delta
    if np.any(s > LOG_OVERFLOW):
        raise FloatingPointError(f"w/delta = {s.max():.1f} exceeds {LOG_OVERFLOW}")
    return np.exp(s)


def check_scheme(scheme: Scheme, p: Params) -> None:
    """Raise ``ValueError`` if ``scheme`` cannot integrate the model ``p``."""
    if scheme == "pp" and p.eps != 1:
        raise ValueError("scheme 'pp' requires eps=1")
    if scheme == "pe" and p.eps != 0:
        raise ValueError("scheme 'pe' requires eps=0")
    if scheme == "log" and not p.delta > 0:
        raise ValueError("scheme 'log' requires delta > 0")
    if p.eps == 0 and p.c_boundary != "neumann":
        raise ValueError("eps=0 formulations in v = c + delta rho support only Neumann c")
    if scheme != "log" and p.eta > 0:
        raise ValueError("eta > 0 is only meaningful for the log scheme")


class _System:
    """Residual/Jacobian pair for one implicit Euler step.

    Unknown vector ``x = [u; s]`` where ``u`` is rho (pp, pe) or w (log)
    and ``s`` is c (eps=1) or v (eps=0).
    """

    def __init__(self, scheme: Scheme, grid: Grid, old: State, dt: float, p: Params, source: Source | None = None):
        check_scheme(scheme, p)
        self.scheme, self.grid, self.p, self.dt = scheme, grid, p, dt
        self.ops = _ops(grid)
        self.n = grid.n_cells
        self.rho_old = old.rho.values
        self.c_old = old.c.values
        self.Lc = grid.laplacian_matrix(p.c_boundary)
        if source is not None:
            s1, s2 = source(old.t + dt)
            self.src = (np.asarray(s1, dtype=float), np.asarray(s2, dtype=float))
        else:
            self.src = None

    def split(self, x):
        return x[: self.n], x[self.n :]

    def rho(self, u):
        return _rho_of_w(u, self.p.delta) if self.scheme == "log" else u

    def evaluate(self, x, need_jac: bool = True):
        p, ops, n, dt = self.p, self.ops, self.n, self.dt
        u, s = self.split(x)
        rho = self.rho(u)
        f, _ = signal_production(rho, p.alpha)
        fprime = signal_production_derivative(rho, p.alpha)

        face = ops.log_mean_face(u, p.delta, need_jac) if self.scheme == "log" else None
        if p.eps == 0:
            # flux (1 + delta rho) grad rho - rho grad v ; s = v
            div, ddiv_drho, ddiv_ds, ddiv_dface = ops.drift_terms(rho, s, p.delta, need_jac, face)
            r2 = -ops.LN @ s + s - p.delta * rho - f
        else:
            # flux grad rho - rho grad c ; s = c
            div, ddiv_drho, ddiv_ds, ddiv_dface = ops.drift_terms(rho, s, 0.0, need_jac, face)
            r2 = (s - self.c_old) / dt - self.Lc @ s - p.delta * (ops.LN @ rho) + s - f
        r1 = (rho - self.rho_old) / dt - div
        eta_jac = None
        if self.scheme == "log" and p.eta > 0:
            eta_val, eta_jac = ops.eta_terms(u, rho, p.delta, need_jac)
            r1 = r1 + p.eta * eta_val
        if self.src is not None:
            r1 = r1 - self.src[0]
            r2 = r2 - self.src[1]
        r = np.concatenate([r1, r2])
        if not need_jac:
            return r, None

        J11 = sp.identity(n) / dt - ddiv_drho
        J12 = -ddiv_ds
        if p.eps == 0:
            J21 = -p.delta * ops.I - sp.diags(fprime)
            J22 = ops.I - ops.LN
        else:
            J21 = -p.delta * ops.LN - sp.diags(fprime)
            J22 = (1.0 / dt + 1.0) * ops.I - self.Lc
        if self.scheme == "log":
            chain = sp.diags(rho / p.delta)
            J11 = J11 @ chain - ddiv_dface
            J21 = J21 @ chain
            if eta_jac is not None:
                J11 = J11 + p.eta * eta_jac
        J = sp.bmat([[J11, J12], [J21, J22]], format="csc")
        return r, J

    def residual(self, x):
        return self.evaluate(x, need_jac=False)[0]

    def jacobian(self, x):
        return self.evaluate(x)[1]

    # Newton works on a rescaled system: time blocks times dt, everything
    # divided by the density scale of the old state.
    def row_scale(self):
        scale = max(1.0, float(np.max(np.abs(self.rho_old))))
        s2 = self.dt if self.p.eps == 1 else 1.0
        return np.concatenate([np.full(self.n, self.dt / scale), np.full(self.n, s2 / scale)])

    def initial_guess(self):
        p = self.p
        u = self.rho_old
        if self.scheme == "log":
            u = p.delta * np.log(np.maximum(self.rho_old, _RHO_FLOOR))
        if p.eps == 1:
            s = self.c_old
        else:
            s = self.c_old + p.delta * self.rho_old
        return np.concatenate([u, s])


def _state_from_x(system: _System, x, t) -> State:
    grid, p = system.grid, system.p
    u, s = system.split(x)
    rho = system.rho(u)
    c = s - p.delta * rho if p.eps == 0 else s
    return State(Field(grid, rho, "rho"), Field(grid, c, "c"), t)


# -- public residuals --------------------------------------------------------


def residual_pp(new: State, old: State, dt: float, p: Params, source: Source | None = None) -> np.ndarray:
    """Backward-Euler residual of the parabolic-parabolic system, stacked
    ``[rho-equation; c-equation]``."""
    sysm = _System("pp", new.grid, old, dt, p, source)
    return sysm.residual(np.concatenate([new.rho.values, new.c.values]))


def residual_pe(new_rho: Field, old_rho: Field, v: Field, dt: float, p: Params) -> np.ndarray:
    """Residual of the reformulated parabolic-elliptic system, stacked
    ``[rho-equation; v-equation]``."""
    grid = new_rho.grid
    old = State(old_rho, Field(grid, np.zeros(grid.n_cells), "c"), 0.0)
    sysm = _System("pe", grid, old, dt, p)
    return sysm.residual(np.concatenate([new_rho.values, v.values]))


def residual_log(new_w: Field, new_c_or_v: Field, old: State, dt: float, p: Params) -> np.ndarray:
    """Residual of the log-variable scheme with ``rho = exp(w / delta)``.

    Raises ``FloatingPointError`` when ``w / delta`` leaves the range of
    ``exp``.
    """
    sysm = _System("log", new_w.grid, old, dt, p)
    return sysm.residual(np.concatenate([new_w.values, new_c_or_v.values]))


def jacobian(scheme: Scheme, x, old: State, dt: float, p: Params, source: Source | None = None):
    """Analytic Jacobian of the unscaled residual at ``x``."""
    return _System(scheme, old.grid, old, dt, p, source).jacobian(np.asarray(x, dtype=float))


def solve_elliptic_c(rho: Field, p: Params) -> Field:
    """Solve ``(-Lap + I) c = rho^alpha`` with ``p.c_boundary``."""
    grid = rho.grid
    f, _ = signal_production(rho.values, p.alpha)
    A = sp.identity(grid.n_cells, format="csc") - grid.laplacian_matrix(p.c_boundary)
    return Field(grid, linear_solve(A, f, rtol=1e-8), "c")


def consistent_state(state: State, p: Params) -> State:
    """For eps=0, replace ``c`` by the solution of the elliptic equation
    ``-Lap v + v = delta rho + rho^alpha``, ``c = v - delta rho``."""
    if p.eps == 1:
        return state
    grid = state.grid
    rho = state.rho.values
    f, _ = signal_production(rho, p.alpha)
    A = sp.identity(grid.n_cells, format="csc") - grid.laplacian_matrix("neumann")
    v = linear_solve(A, p.delta * rho + f, rtol=1e-8)
    return State(state.rho, Field(grid, v - p.delta * rho, "c"), state.t)


# -- stepping ----------------------------------------------------------------


def attempt_step(
    state: State,
    dt: float,
    p: Params,
    scheme: Scheme,
    settings: NewtonSettings = NewtonSettings(),
    growth_guard: float = 2.0,
    source: Source | None = None,
) -> StepOutcome:
    """One implicit Euler step at exactly ``dt``; never retries."""
    sysm = _System(scheme, state.grid, state, dt, p, source)
    w = sysm.row_scale()
    x0 = sysm.initial_guess()

    def scaled_res(x):
        return w * sysm.residual(x)

    def scaled_jac(x):
        return sp.diags(w) @ sysm.jacobian(x)

    accept = None
    if scheme == "log":
        # rho(w) is nonlinear, so the Newton iterates do not conserve mass by
        # themselves; insist on a mass defect at rounding level.
        m = state.grid.measure
        budget = 1e-13 * max(abs(state.grid.integrate(state.rho.values)), 1e-300)
        k = sysm.n

        def accept(x, r):
            return abs(np.dot(m, r[:k])) / w[0] <= budget * (1.0 / dt)

    res = newton(scaled_res, x0, settings, scaled_jac, accept)
    if not res.converged:
        return StepOutcome("retry_smaller_dt", None, res.n_iter, dt, message=res.message)
    try:
        new = _state_from_x(sysm, res.x, state.t + dt)
    except (ValueError, FloatingPointError) as exc:
        return StepOutcome("retry_smaller_dt", None, res.n_iter, dt, message=str(exc))
    old_max = float(np.max(np.abs(state.rho.values)))
    new_max = float(np.max(np.abs(new.rho.values)))
    if old_max > 0 and new_max > growth_guard * old_max:
        return StepOutcome(
            "retry_smaller_dt", None, res.n_iter, dt,
            message=f"L-inf growth {new_max / old_max:.3g} exceeds guard {growth_guard}",
        )
    clamped = bool(np.any(new.rho.values < 0))
    return StepOutcome("accepted", new, res.n_iter, dt, clamped=clamped)


def advance(
    state: State,
    ctrl: TimeController,
    p: Params,
    scheme: Scheme,
    settings: NewtonSettings = NewtonSettings(),
    source: Source | None = None,
    max_dt: float | None = None,
) -> StepOutcome:
    """Advance one accepted step, halving ``dt`` on failure.

    ``max_dt`` caps the attempted step (to land on output times) without
    changing the controller's step for subsequent calls. Returns a
    ``breakdown`` outcome once ``dt`` would drop below ``ctrl.dt_min``.
    """
    dt = ctrl.dt if max_dt is None else min(ctrl.dt, max_dt)
    capped = max_dt is not None and max_dt < ctrl.dt
    retries = 0
    while True:
        out = attempt_step(state, dt, p, scheme, settings, ctrl.growth_guard, source)
        if out.status == "accepted":
            if retries:
                out.next_dt = dt
            elif capped:
                out.next_dt = ctrl.dt
            else:
                out.next_dt = min(ctrl.dt * ctrl.grow, ctrl.dt_max)
            out.retries = retries
            return out
        log.debug("t=%.6g dt=%.3e rejected: %s", state.t, dt, out.message)
        dt *= ctrl.shrink
        retries += 1
        if dt < ctrl.dt_min * (1 - 1e-12):
            return StepOutcome(
                "breakdown", None, out.newton_iters, dt, dt, retries,
                message=f"dt fell below dt_min={ctrl.dt_min:g}: {out.message}",
            )
