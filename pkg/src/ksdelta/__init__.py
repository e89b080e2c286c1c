"""Keller-Segel chemotaxis with additional cross-diffusion: finite-volume
solvers, entropy diagnostics and the vanishing cross-diffusion harness."""

from .diagnostics import (
    DiagRecord,
    DiffNorms,
    discrete_h2_norms,
    dissipation_terms,
    entropy_H1,
    entropy_Hp,
    entropy_residual_H1,
    grad_laplacian_seminorm,
    level_set_radius,
)
from .harness import (
    BlowupReport,
    BumpReport,
    SweepResult,
    SweepSpec,
    blowup_probe,
    bump_study,
    delta_sweep,
    fit_power_law,
    run,
)
from .mesh import Field, Grid, build_polar, build_radial, build_rect, div_flux, gradient_sq_integral, integrate, laplacian
from .model import (
    InitialData,
    Params,
    State,
    diffusion_eigenvalues,
    eval_bump,
    eval_rho0_experiment1,
    recover_c,
    reformulate,
    signal_production,
)
from .solver import (
    NewtonSettings,
    StepOutcome,
    TimeController,
    advance,
    linear_solve,
    newton,
    residual_log,
    residual_pe,
    residual_pp,
    solve_elliptic_c,
)

__version__ = "0.1.0"
