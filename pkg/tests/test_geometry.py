"""Discrete differential operators against hand values and symbolic oracles."""

import numpy as np
import pytest

from mse_lab.errors import MetricInvalidError
from mse_lab.geometry import (
    christoffel_hat,
    d1_inward,
    grad_hat,
    hess_hat,
    integrate_volume,
    laplace_beltrami_hat,
    norm_grad_sq_hat,
    normal_derivative_side,
    trapezoid_weights,
)
from mse_lab.grid import Grid, ScalarField, scalar_field
from mse_lab.metrics import MetricSpec, metric_preset
from mse_lab.symbolic import evaluate_on_grid, ghat_matrix, sym_laplace_hat
from mse_lab.expressions import parse_expression


@pytest.fixture
def grid():
    return Grid(33, 33)


def test_christoffel_euclidean_zero(grid):
    chr_ = christoffel_hat(metric_preset("euclidean"), grid)
    assert np.all(chr_.gamma == 0.0)


def test_christoffel_conformal_oracle(grid):
    # ghat = e^{2 x1} I: nonzero symbols are G^1_11 = 1, G^1_22 = -1,
    # G^2_12 = G^2_21 = 1
    metric = MetricSpec("exp(2*x1)", "0", "exp(2*x1)")
    gam = christoffel_hat(metric, grid).gamma
    one = np.ones(grid.shape())
    assert np.allclose(gam[0, 0, 0], one, atol=1e-12)
    assert np.allclose(gam[0, 1, 1], -one, atol=1e-12)
    assert np.allclose(gam[1, 0, 1], one, atol=1e-12)
    assert np.allclose(gam[1, 1, 0], one, atol=1e-12)
    assert np.allclose(gam[0, 0, 1], 0.0, atol=1e-12)
    assert np.allclose(gam[1, 1, 1], 0.0, atol=1e-12)


def test_christoffel_diag_poly_oracle(grid):
    # ghat = diag(1, 1 + x1^2): G^2_12 = x1/(1+x1^2), G^1_22 = -x1
    metric = MetricSpec("1", "0", "1 + x1^2")
    gam = christoffel_hat(metric, grid).gamma
    x1 = grid.x1
    assert np.allclose(gam[1, 0, 1], x1 / (1.0 + x1**2), atol=1e-12)
    assert np.allclose(gam[0, 1, 1], -x1, atol=1e-12)


def test_christoffel_symmetry_bitwise(grid):
    gam = christoffel_hat(metric_preset("diag_poly"), grid).gamma
    assert np.array_equal(gam[:, 0, 1], gam[:, 1, 0])


def test_christoffel_fd_matches_analytic(grid):
    metric = metric_preset("conformal_exp")
    g_an = christoffel_hat(metric, grid).gamma
    g_fd = christoffel_hat(metric, grid, use_fd=True).gamma
    assert np.max(np.abs(g_an - g_fd)) < 1e-8


def test_christoffel_rejects_non_spd(grid):
    with pytest.raises(MetricInvalidError):
        christoffel_hat(MetricSpec("1", "0", "x1 - 0.5"), grid)


def test_grad_hat_constant_is_zero(grid):
    u = scalar_field(grid, lambda x1, x2: np.full_like(x1, 3.7))
    X = grad_hat(u, metric_preset("euclidean"), grid)
    assert np.max(np.abs(X.v1)) < 1e-12 and np.max(np.abs(X.v2)) < 1e-12


def test_grad_hat_euclidean_linear(grid):
    u = scalar_field(grid, lambda x1, x2: x1)
    X = grad_hat(u, metric_preset("euclidean"), grid)
    assert np.allclose(X.v1, 1.0, atol=1e-12)
    assert np.allclose(X.v2, 0.0, atol=1e-12)


def test_grad_hat_diag_metric(grid):
    # ghat = diag(2, 1), u = x1 + x2 -> ghat^{-1} grad u = (1/2, 1)
    metric = MetricSpec("2", "0", "1")
    u = scalar_field(grid, lambda x1, x2: x1 + x2)
    X = grad_hat(u, metric, grid)
    assert np.allclose(X.v1, 0.5, atol=1e-12)
    assert np.allclose(X.v2, 1.0, atol=1e-12)


def test_hessian_quadratic(grid):
    metric = metric_preset("euclidean")
    u = scalar_field(grid, lambda x1, x2: x1**2)
    H = hess_hat(u, metric, grid)
    assert np.allclose(H[0, 0], 2.0, atol=1e-9)
    assert np.allclose(H[1, 1], 0.0, atol=1e-9)
    assert np.allclose(H[0, 1], 0.0, atol=1e-9)
    lap = laplace_beltrami_hat(u, metric, grid)
    assert np.allclose(lap.values, 2.0, atol=1e-9)


def test_hessian_affine_zero(grid):
    u = scalar_field(grid, lambda x1, x2: 1.0 + 2.0 * x1 - 0.5 * x2)
    H = hess_hat(u, metric_preset("euclidean"), grid)
    assert np.max(np.abs(H)) < 1e-10


def test_norm_grad_sq(grid):
    m = metric_preset("euclidean")
    u = scalar_field(grid, lambda x1, x2: np.full_like(x1, 2.0))
    assert np.max(np.abs(norm_grad_sq_hat(u, m, grid).values)) < 1e-12
    u = scalar_field(grid, lambda x1, x2: x1)
    assert np.allclose(norm_grad_sq_hat(u, m, grid).values, 1.0, atol=1e-12)
    m4 = MetricSpec("4", "0", "1")
    assert np.allclose(norm_grad_sq_hat(u, m4, grid).values, 0.25, atol=1e-12)


def test_laplacian_symbolic_oracle_rate():
    # curved metric, curved u: discrete Laplace-Beltrami converges at
    # second order to the closed-form value
    metric = MetricSpec("exp(2*x1)", "0", "exp(2*x1)")
    expr = parse_expression("sin(pi*x1)*cos(x2) + x2^2")
    oracle_expr = sym_laplace_hat(expr, ghat_matrix(metric))
    errs, hs = [], []
    for n in (17, 33, 65):
        g = Grid(n, n)
        u = ScalarField(g, evaluate_on_grid(expr, g))
        lap = laplace_beltrami_hat(u, metric, g)
        oracle = evaluate_on_grid(oracle_expr, g)
        errs.append(np.max(np.abs((lap.values - oracle)[g.interior_mask])))
        hs.append(g.h)
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.7 <= rate <= 2.3


def test_operator_linearity(grid):
    metric = metric_preset("diag_poly")
    u = scalar_field(grid, lambda x1, x2: np.sin(x1) * x2)
    v = scalar_field(grid, lambda x1, x2: np.cos(2 * x2) + x1**2)
    a, b = 1.7, -0.3
    lhs = laplace_beltrami_hat(a * u + b * v, metric, grid).values
    rhs = (
        a * laplace_beltrami_hat(u, metric, grid).values
        + b * laplace_beltrami_hat(v, metric, grid).values
    )
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_d1_inward_second_order():
    errs, hs = [], []
    for n in (17, 33, 65):
        g = Grid(n, n)
        vals = np.sin(2.0 * g.x1) * np.cosh(g.x2)
        exact = 2.0 * np.cos(2.0 * g.x1) * np.cosh(g.x2)
        got = d1_inward(vals, g.h, 0)
        errs.append(np.max(np.abs(got - exact)))
        hs.append(g.h)
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.7 <= rate <= 2.3


def test_integrate_volume_constant(grid):
    # euclidean volume of the unit square
    total = integrate_volume(np.ones(grid.shape()), metric_preset("euclidean"), grid)
    assert abs(total - 1.0) < 1e-12
    assert abs(np.sum(trapezoid_weights(grid)) - 1.0) < 1e-12


def test_normal_derivative_linear(grid):
    u = grid.x1.copy()
    tr = normal_derivative_side(u, grid, "right", metric_preset("euclidean"))
    assert np.allclose(tr, 1.0, atol=1e-10)
    tr4 = normal_derivative_side(u, grid, "right", MetricSpec("4", "0", "1"))
    assert np.allclose(tr4, 0.25, atol=1e-10)
    tr_left = normal_derivative_side(u, grid, "left", metric_preset("euclidean"))
    assert np.allclose(tr_left, -1.0, atol=1e-10)
