"""Numerical laboratory for the minimal surface equation on conformal
product metrics g = c(x) (ghat ⊕ e): forward solves, Dirichlet-to-Neumann
data, linearizations, and Taylor-coefficient recovery of the conformal
factor at the surface."""

from .grid import (
    BoundaryData,
    Grid,
    ScalarField,
    VectorField,
    boundary_data_from_callable,
    constant_boundary_data,
    make_grid,
    scalar_field,
    side_mode_data,
)
from .metrics import ConformalFactor, MetricSpec, metric_preset
from .geometry import (
    christoffel_hat,
    grad_hat,
    hess_hat,
    integrate_volume,
    laplace_beltrami_hat,
    norm_grad_sq_hat,
)
from .forward import (
    SolverOptions,
    residual_F,
    residual_divergence_form,
    residual_mean_curvature,
    solve_bvp,
)
from .dn import DNRecord, dn_batch, dn_map, neumann_trace
from .linearize import (
    adjoint_special_solution,
    advection_to_magnetic,
    first_lin_solve,
    higher_lin_fd,
    second_lin_solve,
)
from .harness import (
    ExperimentConfig,
    RunManifest,
    emit_plot_data,
    run_convergence_study,
    run_pipeline,
)
from .recovery import (
    gauge_pde_residual,
    identity_residual_check,
    integral_identity_eval,
    poincare_potential,
    recover_surface_gradient,
    recover_taylor_coefficient,
)

__version__ = "0.1.0"
