"""Structured finite-volume grids and discrete calculus.

Every grid is reduced to the same face-graph representation: per-cell
measures, interior faces (pairs of cells with a face measure and the
distance between the two cell centers) and boundary faces (one cell, face
measure, distance from the cell center to the boundary). All operators
below are written against that representation, so rectangle, polar and
radial grids share one code path.

Cell orderings
--------------
rect
    row-major, ``index = iy * nx + ix`` (values reshape to ``(ny, nx)``).
polar
    r-index outer, theta-index inner, ``index = ir * ntheta + itheta``.
radial
    increasing r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

BC = Literal["neumann", "dirichlet0"]


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable structured grid in face-graph form.

    Use :func:`build_rect`, :func:`build_polar` or :func:`build_radial`
    rather than calling the constructor directly.
    """

    kind: Literal["rect", "polar", "radial"]
    resolution: tuple[int, ...]
    extents: tuple[float, ...]
    measure: np.ndarray
    x: np.ndarray
    y: np.ndarray
    face_i: np.ndarray
    face_j: np.ndarray
    face_area: np.ndarray
    face_dist: np.ndarray
    bnd_cell: np.ndarray
    bnd_area: np.ndarray
    bnd_dist: np.ndarray
    r: np.ndarray | None = None
    r_edges: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return self.measure.size

    @property
    def n_faces(self) -> int:
        return self.face_i.size

    @property
    def domain_measure(self) -> float:
        if self.kind == "rect":
            (x0, x1, y0, y1) = self.extents
            return (x1 - x0) * (y1 - y0)
        return math.pi * self.extents[0] ** 2

    @property
    def header(self) -> str:
        res = " ".join(str(n) for n in self.resolution)
        ext = " ".join(repr(float(e)) for e in self.extents)
        return f"{self.kind} {res} {ext}"

    # -- sparse building blocks ------------------------------------------

    @cached_property
    def diff_matrix(self) -> sp.csr_matrix:
        """Face difference operator: ``(D u)_f = u[j_f] - u[i_f]``."""
        nf, n = self.n_faces, self.n_cells
        rows = np.repeat(np.arange(nf), 2)
        cols = np.column_stack([self.face_i, self.face_j]).ravel()
        vals = np.tile([-1.0, 1.0], nf)
        return sp.csr_matrix((vals, (rows, cols)), shape=(nf, n))

    @cached_property
    def mean_matrix(self) -> sp.csr_matrix:
        """Face arithmetic mean: ``(A u)_f = (u[i_f] + u[j_f]) / 2``."""
        return abs(self.diff_matrix) * 0.5

    @cached_property
    def transmissibility(self) -> np.ndarray:
        return self.face_area / self.face_dist

    @cached_property
    def div_matrix(self) -> sp.csr_matrix:
        """Maps face fluxes (oriented i -> j, integrated over the face) to
        the per-unit-measure net inflow of each cell."""
        return sp.diags(1.0 / self.measure) @ (-self.diff_matrix.T).tocsr()

    @cached_property
    def _lap_neumann(self) -> sp.csr_matrix:
        return (self.div_matrix @ sp.diags(self.transmissibility) @ self.diff_matrix).tocsr()

    @cached_property
    def _lap_dirichlet(self) -> sp.csr_matrix:
        extra = np.zeros(self.n_cells)
        np.add.at(extra, self.bnd_cell, self.bnd_area / self.bnd_dist)
        return (self._lap_neumann - sp.diags(extra / self.measure)).tocsr()

    def laplacian_matrix(self, bc: BC = "neumann") -> sp.csr_matrix:
        if bc == "neumann":
            return self._lap_neumann
        if bc == "dirichlet0":
            return self._lap_dirichlet
        raise ValueError(f"unknown boundary condition {bc!r}")

    # -- array-level operators -------------------------------------------

    def integrate(self, values) -> float:
        return float(np.dot(values, self.measure))

    def laplacian(self, values, bc: BC = "neumann") -> np.ndarray:
        return self.laplacian_matrix(bc) @ np.asarray(values, dtype=float)

    def gradient_sq(self, values) -> float:
        du = self.diff_matrix @ np.asarray(values, dtype=float)
        return float(np.dot(du * du, self.transmissibility))

    def face_flux(self, u, phi=None, diffusivity=None, chi=None) -> np.ndarray:
        """Integrated face flux of ``d grad u - chi u grad phi``.

        ``diffusivity`` may be a scalar, per-face or per-cell array (cell
        values are averaged onto faces); ``chi`` a scalar or per-cell array.
        """
        u = np.asarray(u, dtype=float)
        D, A = self.diff_matrix, self.mean_matrix
        if diffusivity is None:
            d_face = 1.0
        else:
            diffusivity = np.asarray(diffusivity, dtype=float)
            if diffusivity.ndim == 0 or diffusivity.size == self.n_faces:
                d_face = diffusivity
            else:
                d_face = A @ diffusivity
        flux = d_face * (D @ u)
        if phi is not None:
            cu = u if chi is None else np.asarray(chi, dtype=float) * u
            flux = flux - (A @ cu) * (D @ np.asarray(phi, dtype=float))
        return self.transmissibility * flux

    def div_flux(self, u, phi=None, diffusivity=None, chi=None) -> np.ndarray:
        return self.div_matrix @ self.face_flux(u, phi, diffusivity, chi)

    def boundary_face_values(self, values, bc: BC) -> np.ndarray:
        """Reconstructed value on each boundary face (0 for dirichlet0,
        the adjacent cell value for neumann)."""
        if bc == "dirichlet0":
            return np.zeros(self.bnd_cell.size)
        return np.asarray(values, dtype=float)[self.bnd_cell]


@dataclass(frozen=True, eq=False)
class Field:
    """Cell-averaged scalar bound to a grid."""

    grid: Grid
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ValueError(
                f"field {self.tag!r} has {v.size} values, grid has {self.grid.n_cells} cells"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError(f"field {self.tag!r} contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values, tag: str | None = None) -> "Field":
        return Field(self.grid, values, self.tag if tag is None else tag)


def _check_res(name: str, value: int, minimum: int) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def build_rect(nx: int, ny: int, bounds: Sequence[Sequence[float]] = ((0.0, 1.0), (0.0, 1.0))) -> Grid:
    """Uniform tensor grid on ``[x0, x1] x [y0, y1]``."""
    nx = _check_res("nx", nx, 2)
    ny = _check_res("ny", ny, 2)
    (x0, x1), (y0, y1) = bounds
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle bounds {bounds!r}")
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    xc = x0 + (np.arange(nx) + 0.5) * hx
    yc = y0 + (np.arange(ny) + 0.5) * hy
    X, Y = np.meshgrid(xc, yc)  # shape (ny, nx)
    idx = np.arange(nx * ny).reshape(ny, nx)

    fi = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    fj = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    n_xf, n_yf = ny * (nx - 1), (ny - 1) * nx
    farea = np.concatenate([np.full(n_xf, hy), np.full(n_yf, hx)])
    fdist = np.concatenate([np.full(n_xf, hx), np.full(n_yf, hy)])

    bcell = np.concatenate([idx[:, 0], idx[:, -1], idx[0, :], idx[-1, :]])
    barea = np.concatenate([np.full(2 * ny, hy), np.full(2 * nx, hx)])
    bdist = np.concatenate([np.full(2 * ny, hx / 2), np.full(2 * nx, hy / 2)])

    return Grid(
        kind="rect",
        resolution=(nx, ny),
        extents=(float(x0), float(x1), float(y0), float(y1)),
        measure=_frozen(np.full(nx * ny, hx * hy)),
        x=_frozen(X.ravel()),
        y=_frozen(Y.ravel()),
        face_i=fi,
        face_j=fj,
        face_area=_frozen(farea),
        face_dist=_frozen(fdist),
        bnd_cell=bcell,
        bnd_area=_frozen(barea),
        bnd_dist=_frozen(bdist),
    )


def build_polar(nr: int, ntheta: int, R: float = 1.0) -> Grid:
    """Disk of radius ``R`` split into ``nr`` rings of ``ntheta`` sectors.

    The innermost ring consists of pie slices whose origin-side face has
    zero measure, so nothing flows through ``r = 0``.
    """
    nr = _check_res("nr", nr, 2)
    ntheta = _check_res("ntheta", ntheta, 4)
    if not R > 0:
        raise ValueError(f"R must be positive, got {R!r}")
    dr, dth = R / nr, 2 * math.pi / ntheta
    edges = np.linspace(0.0, R, nr + 1)
    rc = 0.5 * (edges[:-1] + edges[1:])
    th = (np.arange(ntheta) + 0.5) * dth
    idx = np.arange(nr * ntheta).reshape(nr, ntheta)

    ring = 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2) * dth
    measure = np.repeat(ring, ntheta)

    # radial faces (ir, j) -- (ir + 1, j)
    fi_r = idx[:-1, :].ravel()
    fj_r = idx[1:, :].ravel()
    area_r = np.repeat(edges[1:-1] * dth, ntheta)
    dist_r = np.full(fi_r.size, dr)
    # angular faces (ir, j) -- (ir, j + 1), periodic
    fi_t = idx.ravel()
    fj_t = np.roll(idx, -1, axis=1).ravel()
    area_t = np.full(fi_t.size, dr)
    dist_t = np.repeat(rc * dth, ntheta)

    RR, TT = np.meshgrid(rc, th, indexing="ij")
    return Grid(
        kind="polar",
        resolution=(nr, ntheta),
        extents=(float(R),),
        measure=_frozen(measure),
        x=_frozen((RR * np.cos(TT)).ravel()),
        y=_frozen((RR * np.sin(TT)).ravel()),
        face_i=np.concatenate([fi_r, fi_t]),
        face_j=np.concatenate([fj_r, fj_t]),
        face_area=_frozen(np.concatenate([area_r, area_t])),
        face_dist=_frozen(np.concatenate([dist_r, dist_t])),
        bnd_cell=idx[-1, :].copy(),
        bnd_area=_frozen(np.full(ntheta, R * dth)),
        bnd_dist=_frozen(np.full(ntheta, R - rc[-1])),
        r=_frozen(RR.ravel()),
        r_edges=_frozen(edges),
    )


def build_radial(nr: int, R: float = 1.0) -> Grid:
    """Radially symmetric disk: ``nr`` annuli, measures include the 2*pi."""
    nr = _check_res("nr", nr, 2)
    if not R > 0:
        raise ValueError(f"R must be positive, got {R!r}")
    dr = R / nr
    edges = np.linspace(0.0, R, nr + 1)
    rc = 0.5 * (edges[:-1] + edges[1:])
    return Grid(
        kind="radial",
        resolution=(nr,),
        extents=(float(R),),
        measure=_frozen(math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)),
        x=_frozen(rc),
        y=_frozen(np.zeros(nr)),
        face_i=np.arange(nr - 1),
        face_j=np.arange(1, nr),
        face_area=_frozen(2 * math.pi * edges[1:-1]),
        face_dist=_frozen(np.full(nr - 1, dr)),
        bnd_cell=np.array([nr - 1]),
        bnd_area=_frozen([2 * math.pi * R]),
        bnd_dist=_frozen([R - rc[-1]]),
        r=_frozen(rc),
        r_edges=_frozen(edges),
    )


def build_grid(kind: str, resolution: Sequence[int], *, R: float = 1.0, bounds=None) -> Grid:
    """Dispatch on ``kind``; used by config loading."""
    if kind == "rect":
        nx, ny = resolution
        return build_rect(nx, ny, bounds if bounds is not None else ((0.0, 1.0), (0.0, 1.0)))
    if kind == "polar":
        nr, nt = resolution
        return build_polar(nr, nt, R)
    if kind == "radial":
        (nr,) = resolution
        return build_radial(nr, R)
    raise ValueError(f"unknown grid kind {kind!r}")


# -- Field-level operations ------------------------------------------------


def integrate(f: Field) -> float:
    """Midpoint quadrature ``sum(values * measure)``."""
    return f.grid.integrate(f.values)


def laplacian(f: Field, bc: BC = "neumann") -> Field:
    """Second-order finite-volume Laplacian.

    ``neumann`` puts zero flux on boundary faces; ``dirichlet0`` mirrors a
    ghost value so the boundary-face value is zero.
    """
    return Field(f.grid, f.grid.laplacian(f.values, bc), f"lap({f.tag})")


def div_flux(u: Field, drift_potential: Field | None = None, diffusivity=None, chi: Field | None = None) -> Field:
    """Divergence of ``d grad u - chi u grad phi`` with zero boundary flux.

    ``diffusivity`` may be given per cell (averaged to faces) or per face.
    Face values of ``d`` and ``chi * u`` are arithmetic means.
    """
    g = u.grid
    d = getattr(diffusivity, "values", diffusivity)
    phi = None if drift_potential is None else drift_potential.values
    ch = None if chi is None else chi.values
    return Field(g, g.div_flux(u.values, phi, d, ch), f"div({u.tag})")


def gradient_sq_integral(f: Field) -> float:
    """Discrete ``int |grad f|^2`` summed over interior faces."""
    return f.grid.gradient_sq(f.values)
