"""Entropies, dissipation integrals, difference norms and bump geometry."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .mesh import Field, Grid
from .model import Params, State

DIAG_COLUMNS = (
    "t", "mass", "rho_min", "rho_max", "H1", "H2p", "H3p",
    "diss_sqrt", "diss_grad", "entropy_residual", "clamped",
)


@dataclass(frozen=True)
class DiagRecord:
    t: float
    mass: float
    rho_min: float
    rho_max: float
    H1: float
    H2p: float
    H3p: float
    diss_sqrt: float
    diss_grad: float
    entropy_residual: float
    clamped: bool

    def as_tuple(self) -> tuple:
        return astuple(self)


assert tuple(f.name for f in fields(DiagRecord)) == DIAG_COLUMNS


@dataclass(frozen=True)
class DiffNorms:
    """Squared discrete norms ``||f||^2`` in L2, H1 and H2."""

    l2: float
    h1: float
    h2: float


def _vals(f) -> tuple[Grid, np.ndarray]:
    return f.grid, np.asarray(f.values, dtype=float)


def _h(rho: np.ndarray) -> np.ndarray:
    rho = np.maximum(rho, 0.0)
    out = -rho.copy()
    pos = rho > 0
    out[pos] = rho[pos] * (np.log(rho[pos]) - 1.0)
    return out


def entropy_H1(rho: Field) -> float:
    """``int rho (log rho - 1)`` with ``0 log 0 = 0``; negative values count as 0."""
    g, v = _vals(rho)
    return g.integrate(_h(v))


def entropy_Hp(rho: Field, p: int) -> float:
    """``int rho^p`` for ``p`` in {2, 3}."""
    if p not in (2, 3):
        raise ValueError(f"p must be 2 or 3, got {p!r}")
    g, v = _vals(rho)
    return g.integrate(np.maximum(v, 0.0) ** p)


def dissipation_terms(rho: Field, delta: float) -> tuple[float, float]:
    """``(4 int |grad sqrt(rho)|^2, delta int |grad rho|^2)``."""
    g, v = _vals(rho)
    return 4.0 * g.gradient_sq(np.sqrt(np.maximum(v, 0.0))), delta * g.gradient_sq(v)


def _eta_dissipation(g: Grid, rho: np.ndarray, p: Params) -> float:
    w = p.delta * np.log(np.maximum(rho, 1e-300))
    lw = g.laplacian(w, "neumann")
    grad = (g.diff_matrix @ w) / g.face_dist
    quartic = float(np.sum(g.face_area * g.face_dist * grad**4))
    return p.eta / p.delta * (g.integrate(lw * lw) + quartic / p.delta**2 + g.integrate(w * w * rho))


def entropy_rhs(rho: Field, p: Params) -> float:
    """``int (delta rho^2 + rho^(alpha + 1))``."""
    g, v = _vals(rho)
    v = np.maximum(v, 0.0)
    return g.integrate(p.delta * v * v + v ** (p.alpha + 1.0))


def entropy_residual_H1(new: State, old: State, dt: float, p: Params) -> float:
    """Left minus right side of the discrete entropy inequality.

    Nonpositive values (up to rounding) mean the inequality holds for this
    step. The regularization dissipation is added when ``p.eta > 0``.
    """
    g = new.grid
    rho = new.rho.values
    lhs = (entropy_H1(new.rho) - entropy_H1(old.rho)) / dt
    lhs += sum(dissipation_terms(new.rho, p.delta))
    if p.eta > 0:
        lhs += _eta_dissipation(g, rho, p)
    return lhs - entropy_rhs(new.rho, p)


def diag_record(new: State, old: State | None, dt: float | None, p: Params, clamped: bool = False) -> DiagRecord:
    g, rho = new.grid, new.rho.values
    d_sqrt, d_grad = dissipation_terms(new.rho, p.delta)
    if old is None or not dt:
        res = math.nan
    else:
        res = entropy_residual_H1(new, old, dt, p)
    return DiagRecord(
        t=float(new.t),
        mass=g.integrate(rho),
        rho_min=float(rho.min()),
        rho_max=float(rho.max()),
        H1=entropy_H1(new.rho),
        H2p=entropy_Hp(new.rho, 2),
        H3p=entropy_Hp(new.rho, 3),
        diss_sqrt=d_sqrt,
        diss_grad=d_grad,
        entropy_residual=res,
        clamped=bool(clamped or rho.min() < 0),
    )


def discrete_h2_norms(f: Field) -> DiffNorms:
    """Squared norms; H2 uses the Neumann Laplacian as second-order seminorm."""
    g, v = _vals(f)
    l2 = g.integrate(v * v)
    h1 = l2 + g.gradient_sq(v)
    lap = g.laplacian(v, "neumann")
    return DiffNorms(l2, h1, h1 + g.integrate(lap * lap))


def grad_laplacian_seminorm(f: Field) -> float:
    """``||grad Lap f||^2``."""
    g, v = _vals(f)
    return g.gradient_sq(g.laplacian(v, "neumann"))


def h2_distance(a: State, b: State, include_c: bool) -> float:
    """``sqrt(||rho_a - rho_b||_H2^2 [+ ||c_a - c_b||_H2^2])``."""
    g = a.grid
    total = discrete_h2_norms(Field(g, a.rho.values - b.rho.values)).h2
    if include_c:
        total += discrete_h2_norms(Field(g, a.c.values - b.c.values)).h2
    return math.sqrt(total)


def l2_distance(a: State, b: State, include_c: bool) -> float:
    g = a.grid
    total = discrete_h2_norms(Field(g, a.rho.values - b.rho.values)).l2
    if include_c:
        total += discrete_h2_norms(Field(g, a.c.values - b.c.values)).l2
    return math.sqrt(total)


def level_set_radius(rho: Field, level: float) -> float:
    """Outermost radius where the linearly interpolated profile equals ``level``.

    Returns the domain radius when the profile never drops below ``level``
    and 0 when it never reaches it.
    """
    g = rho.grid
    if g.kind != "radial":
        raise ValueError(f"level_set_radius needs a radial grid, got {g.kind!r}")
    v = np.asarray(rho.values)
    above = np.flatnonzero(v >= level)
    if above.size == 0:
        return 0.0
    i = above[-1]
    if i == v.size - 1:
        return float(g.extents[0])
    r0, r1 = g.r[i], g.r[i + 1]
    frac = (v[i] - level) / (v[i] - v[i + 1])
    return float(r0 + frac * (r1 - r0))
