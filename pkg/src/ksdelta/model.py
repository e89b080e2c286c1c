"""Model parameters, nonlinearities and initial data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .mesh import BC, Field, Grid


@dataclass(frozen=True)
class Params:
    """Parameters of the cross-diffusion Keller-Segel system.

    Attributes
    ----------
    delta : float
        Cross-diffusion strength, ``>= 0``.
    eps : int
        1 for the parabolic-parabolic system, 0 for parabolic-elliptic.
    alpha : float
        Signal-production exponent, ``> 0``.
    c_boundary : {"neumann", "dirichlet0"}
        Boundary condition for the chemical concentration.
    eta : float
        Regularization of the log-variable scheme; 0 disables it.
    """

    delta: float = 0.0
    eps: int = 1
    alpha: float = 1.0
    c_boundary: BC = "neumann"
    eta: float = 0.0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta!r}")
        if self.eps not in (0, 1):
            raise ValueError(f"eps must be 0 or 1, got {self.eps!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")
        if self.c_boundary not in ("neumann", "dirichlet0"):
            raise ValueError(f"unknown c_boundary {self.c_boundary!r}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta!r}")

    def replace(self, **changes) -> "Params":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class State:
    rho: Field
    c: Field
    t: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.rho.grid


# -- pointwise formulas ----------------------------------------------------


def eval_rho0_experiment1(x, y):
    """``80 (x^2 + y^2 - 1)^2 (x - 0.1)^2 + 5`` on the unit disk."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 80.0 * (x * x + y * y - 1.0) ** 2 * (x - 0.1) ** 2 + 5.0


def eval_bump(x, y, x0: float, y0: float, M: float, theta: float):
    """Gaussian bump of mass ``M`` (over the plane) and variance ``theta``."""
    if not (theta > 0 and M > 0):
        raise ValueError("bump needs M > 0 and theta > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = (x - x0) ** 2 + (y - y0) ** 2
    return M / (2 * math.pi * theta) * np.exp(-r2 / (2 * theta))


# four-bump datum: (x0, y0, M) with theta = 1e-2
EXPERIMENT3_BUMPS = (
    (0.25, 0.0, 10 * math.pi),
    (-0.25, 0.0, 4 * math.pi),
    (0.0, -0.25, 4 * math.pi),
    (0.0, 0.25, 4 * math.pi),
    (0.0, 0.5, 4 * math.pi),
    (0.0, 0.35, 4 * math.pi),
    (0.5, 0.0, 4 * math.pi),
    (0.5, 0.25, 4 * math.pi),
)


@dataclass(frozen=True)
class InitialData:
    """Initial density, evaluated at cell centers; ``c0`` defaults to 0.

    ``variant`` is one of ``experiment1``, ``bump_sum``, ``constant`` or
    ``custom``. ``bumps`` holds ``(x0, y0, M, theta)`` tuples, ``values``
    the per-cell table for ``custom``.
    """

    variant: Literal["experiment1", "bump_sum", "constant", "custom"] = "experiment1"
    bumps: tuple[tuple[float, float, float, float], ...] = ()
    value: float = 1.0
    values: tuple[float, ...] | None = field(default=None, repr=False)
    c_value: float = 0.0

    @classmethod
    def experiment1(cls) -> "InitialData":
        return cls("experiment1")

    @classmethod
    def bump_sum(cls, bumps: Sequence[Sequence[float]]) -> "InitialData":
        bumps = tuple(tuple(float(v) for v in b) for b in bumps)
        for b in bumps:
            if len(b) != 4 or b[2] <= 0 or b[3] <= 0:
                raise ValueError(f"bad bump {b!r}: need (x0, y0, M>0, theta>0)")
        return cls("bump_sum", bumps=bumps)

    @classmethod
    def experiment3(cls) -> "InitialData":
        return cls.bump_sum([(x0, y0, M, 1e-2) for x0, y0, M in EXPERIMENT3_BUMPS])

    @classmethod
    def experiment4(cls) -> "InitialData":
        return cls.bump_sum([(0.0, 0.0, 20 * math.pi, 1 / 400)])

    @classmethod
    def constant(cls, value: float, c_value: float = 0.0) -> "InitialData":
        if value < 0:
            raise ValueError("constant density must be >= 0")
        return cls("constant", value=float(value), c_value=float(c_value))

    @classmethod
    def custom(cls, values, c_value: float = 0.0) -> "InitialData":
        values = tuple(float(v) for v in values)
        if min(values) < 0:
            raise ValueError("custom density must be >= 0")
        return cls("custom", values=values, c_value=float(c_value))

    def rho0(self, grid: Grid) -> np.ndarray:
        if self.variant == "experiment1":
            return eval_rho0_experiment1(grid.x, grid.y)
        if self.variant == "bump_sum":
            out = np.zeros(grid.n_cells)
            for x0, y0, M, theta in self.bumps:
                out += eval_bump(grid.x, grid.y, x0, y0, M, theta)
            return out
        if self.variant == "constant":
            return np.full(grid.n_cells, self.value)
        if self.variant == "custom":
            v = np.asarray(self.values, dtype=float)
            if v.size != grid.n_cells:
                raise ValueError(f"custom table has {v.size} values, grid has {grid.n_cells} cells")
            return v
        raise ValueError(f"unknown initial-data variant {self.variant!r}")

    def state(self, grid: Grid) -> State:
        return State(
            Field(grid, self.rho0(grid), "rho"),
            Field(grid, np.full(grid.n_cells, self.c_value), "c"),
            0.0,
        )


# -- nonlinearities --------------------------------------------------------


def signal_production(rho, alpha: float) -> tuple[np.ndarray, bool]:
    """``max(rho, 0) ** alpha`` and whether any value had to be clamped."""
    rho = np.asarray(getattr(rho, "values", rho), dtype=float)
    clamped = bool(np.any(rho < 0))
    return np.maximum(rho, 0.0) ** alpha, clamped


def signal_production_derivative(rho, alpha: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    pos = rho > 0
    out[pos] = alpha * rho[pos] ** (alpha - 1.0)
    return out


def diffusion_matrix(rho: float, delta: float) -> np.ndarray:
    """Coefficient matrix of the second-order terms in ``(rho, c)``."""
    return np.array([[1.0, -rho], [delta, 1.0]])


def diffusion_eigenvalues(rho: float, delta: float) -> tuple[complex, complex]:
    """Eigenvalues ``1 +- i sqrt(delta rho)`` of :func:`diffusion_matrix`."""
    if rho < 0 or delta < 0:
        raise ValueError("rho and delta must be nonnegative")
    s = math.sqrt(delta * rho)
    return complex(1.0, s), complex(1.0, -s)


def reformulate(state: State, delta: float) -> Field:
    """``v = c + delta * rho``."""
    return Field(state.grid, state.c.values + delta * state.rho.values, "v")


def recover_c(v: Field, rho: Field, delta: float) -> Field:
    if v.grid is not rho.grid:
        raise ValueError("v and rho live on different grids")
    return Field(v.grid, v.values - delta * rho.values, "c")
