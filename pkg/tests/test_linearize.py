"""Linearized solves, mixed-difference derivatives, adjoint solutions,
and the magnetic rewriting of the advection operator."""

import numpy as np
import pytest

from mse_lab.errors import ConfigError, StencilEscapeError
from mse_lab.grid import (
    Grid,
    boundary_data_from_callable,
    gamma_mask,
    scalar_field,
    side_mode_data,
)
from mse_lab.linearize import (
    adjoint_special_solution,
    advection_field,
    advection_to_magnetic,
    first_lin_solve,
    higher_lin_fd,
    magnetic_operator_apply,
    second_lin_solve,
)
from mse_lab.grid import VectorField
from mse_lab.metrics import ConformalFactor, MetricSpec, metric_preset


@pytest.fixture
def grid():
    return Grid(33, 33)


def test_advection_field_oracle(grid):
    # c0 = 1 + 0.1 x1, ghat = I, n = 3:
    # X = (1 - n)/(2 c0) ghat^{-1} grad c0 = (-0.1/(1 + 0.1 x1), 0)
    metric = MetricSpec(c=ConformalFactor.from_parts("1 + 0.1*x1", {}))
    X = advection_field(metric, grid)
    assert np.allclose(X.v1, -0.1 / (1.0 + 0.1 * grid.x1), atol=1e-12)
    assert np.allclose(X.v2, 0.0, atol=1e-12)


def test_advection_field_vanishes_for_constant_factor(grid):
    X = advection_field(metric_preset("euclidean"), grid)
    assert np.max(np.abs(X.v1)) == 0.0 and np.max(np.abs(X.v2)) == 0.0


def test_first_lin_euclidean_is_harmonic_extension(grid):
    # constant-factor metric: the first linearization is the ghat-Laplace
    # equation, so an affine trace is reproduced exactly
    metric = metric_preset("euclidean")
    f = boundary_data_from_callable(grid, lambda x1, x2: 0.02 * x1 + 0.01 * x2)
    v = first_lin_solve(metric, f)
    exact = 0.02 * grid.x1 + 0.01 * grid.x2
    assert np.max(np.abs(v.values - exact)) < 1e-10


def test_first_lin_superposition(grid):
    metric = metric_preset("conformal_exp")
    f1 = side_mode_data(grid, "left", 1, amplitude=0.04)
    f2 = side_mode_data(grid, "top", 2, amplitude=0.03)
    combined = f1.values + 0.5 * f2.values
    v1 = first_lin_solve(metric, f1).values
    v2 = first_lin_solve(metric, f2).values
    v12 = first_lin_solve(metric, combined, grid=grid).values
    assert np.max(np.abs(v12 - (v1 + 0.5 * v2))) < 1e-11


def test_first_lin_matches_fd_derivative(grid):
    # d/d eps of the nonlinear solve at eps = 0 equals the linearized solve
    metric = metric_preset("diag_poly")
    f = side_mode_data(grid, "right", 1, amplitude=1.0, delta_cap=np.inf)
    v = first_lin_solve(metric, f.values, grid=grid)
    fd = higher_lin_fd(metric, [side_mode_data(grid, "right", 1, amplitude=1.0,
                                               delta_cap=np.inf)], [1e-3])
    assert np.max(np.abs(v.values - fd.values)) < 1e-4


def test_second_lin_zero_without_cubic_coefficient(grid):
    # the quadratic source carries the third height derivative of c; with
    # none present the correction vanishes identically
    metric = MetricSpec(c=ConformalFactor.from_parts("1 + 0.1*x1", {}))
    v = scalar_field(grid, lambda x1, x2: 0.03 * np.sin(np.pi * x1) * x2)
    w = second_lin_solve(metric, v, v)
    assert np.max(np.abs(w.values)) < 1e-12


def test_second_lin_symmetric_and_zero_trace(grid):
    metric = metric_preset("conformal_exp")
    v1 = first_lin_solve(metric, side_mode_data(grid, "left", 1, amplitude=0.04))
    v2 = first_lin_solve(metric, side_mode_data(grid, "bottom", 2, amplitude=0.04))
    w12 = second_lin_solve(metric, v1, v2)
    w21 = second_lin_solve(metric, v2, v1)
    # symmetric up to float associativity in the quadratic source
    assert np.max(np.abs(w12.values - w21.values)) < 1e-15
    # boundary trace is zero up to the sparse solve's roundoff
    assert np.max(np.abs(w12.values[grid.boundary_mask])) < 1e-14
    assert np.max(np.abs(w12.values)) > 1e-8


def test_second_lin_ctilde_replaces_factor(grid):
    metric = metric_preset("euclidean")
    ctilde = ConformalFactor.from_parts("1", {3: "sin(pi*x1)*sin(pi*x2)"})
    v = first_lin_solve(metric, side_mode_data(grid, "top", 1, amplitude=0.04))
    w_plain = second_lin_solve(metric, v, v)
    w_tilde = second_lin_solve(metric, v, v, ctilde=ctilde)
    assert np.max(np.abs(w_plain.values)) < 1e-12
    assert np.max(np.abs(w_tilde.values)) > 1e-6


def test_higher_lin_fd_argument_checks(grid):
    metric = metric_preset("euclidean")
    fs = [side_mode_data(grid, "left", 1, amplitude=0.04)]
    with pytest.raises(ConfigError):
        higher_lin_fd(metric, fs * 5, [0.1] * 5)
    with pytest.raises(ConfigError):
        higher_lin_fd(metric, fs, [-0.1])


def test_higher_lin_fd_stencil_escape(grid):
    metric = metric_preset("euclidean")
    fs = [side_mode_data(grid, "left", 1, amplitude=0.09)]
    with pytest.raises(StencilEscapeError):
        higher_lin_fd(metric, fs, [2.0])


def test_adjoint_special_solution_properties(grid):
    metric = metric_preset("conformal_exp")
    v = adjoint_special_solution(metric, grid, (0.5, 0.5))
    i0 = j0 = grid.nx // 2
    assert abs(v.values[i0, j0]) > 0.0
    # partial-data mode: boundary trace identically zero outside gamma
    v_left = adjoint_special_solution(metric, grid, (0.25, 0.5), gamma="left")
    outside = grid.boundary_mask & ~gamma_mask(grid, "left")
    scale = np.max(np.abs(v_left.values))
    assert np.max(np.abs(v_left.values[outside])) < 1e-11 * max(scale, 1.0)
    assert abs(v_left.values[int(0.25 / grid.h), j0]) > 0.0


def test_adjoint_probe_must_be_interior(grid):
    with pytest.raises(ConfigError):
        adjoint_special_solution(metric_preset("euclidean"), grid, (0.0, 0.5))


def test_magnetic_coefficients_oracle(grid):
    # constant X = (1, 0) on the flat metric: q = 1/4 |X|^2 - div X / 2 = 1/4
    metric = metric_preset("euclidean")
    X = VectorField(grid, np.ones(grid.shape()), np.zeros(grid.shape()))
    coeffs = advection_to_magnetic(X, metric, grid)
    assert np.allclose(coeffs.q.values, 0.25, atol=1e-10)
    assert np.allclose(coeffs.A.v1, 0.5, atol=1e-12)
    assert coeffs.imaginary


def test_magnetic_operator_matches_advection_form(grid):
    # expanded magnetic operator vs -laplace + X . grad on a smooth field
    from mse_lab.geometry import grad_hat, laplace_beltrami_hat

    metric = metric_preset("diag_poly")
    X = advection_field(metric, grid)
    coeffs = advection_to_magnetic(X, metric, grid)
    u = scalar_field(grid, lambda x1, x2: np.sin(np.pi * x1) * np.cos(2.0 * x2))
    lhs = magnetic_operator_apply(u, coeffs, metric, grid).values
    du = grad_hat(u, metric, grid)
    rhs = (-laplace_beltrami_hat(u, metric, grid).values
           + X.v1 * np.stack([np.gradient(u.values, grid.h, axis=0)])[0]
           + X.v2 * np.gradient(u.values, grid.h, axis=1))
    inner = grid.interior_mask.copy()
    inner[:2] = inner[-2:] = False
    inner[:, :2] = inner[:, -2:] = False
    assert np.max(np.abs((lhs - rhs)[inner])) < 5e-2
