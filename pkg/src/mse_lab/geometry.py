"""Discrete Riemannian differential operators on the structured grid.

All stencils are second-order: centered at interior nodes, one-sided
3-point (first derivatives) / 4-point (second derivatives) at the boundary,
so every operator carries a uniform O(h^2) truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricInvalidError
from .grid import SIDE_NORMALS, Grid, ScalarField, VectorField
from .metrics import MetricSpec

# ---------------------------------------------------------------------------
# finite-difference stencils


def d1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative, centered interior, one-sided second order at edges."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def d1_inward(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative whose two rows nearest each edge use one-sided
    stencils pointing inward.

    Useful when ``values`` is itself built from discrete gradients: the
    centered difference on the first interior row would otherwise read the
    edge row (a different stencil) and lose an order of accuracy."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    for k in (0, 1):
        out[k] = (-3.0 * v[k] + 4.0 * v[k + 1] - v[k + 2]) / (2.0 * h)
        m = v.shape[0] - 1 - k
        out[m] = (3.0 * v[m] - 4.0 * v[m - 1] + v[m - 2]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def d2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative along one axis, one-sided 4-point at the edges."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def d_mixed(values: np.ndarray, h: float) -> np.ndarray:
    """Mixed second derivative d^2/dx1 dx2 (nested centered stencils)."""
    return d1(d1(values, h, 0), h, 1)


def hessian_raw(values: np.ndarray, h: float) -> np.ndarray:
    """Coordinate Hessian d^2 u / dx_i dx_j, shape (2, 2, nx, ny)."""
    H = np.empty((2, 2) + values.shape)
    H[0, 0] = d2(values, h, 0)
    H[1, 1] = d2(values, h, 1)
    H[0, 1] = H[1, 0] = d_mixed(values, h)
    return H


def gradient_raw(values: np.ndarray, h: float) -> np.ndarray:
    """Coordinate gradient (d u / dx_1, d u / dx_2), shape (2, nx, ny)."""
    return np.stack([d1(values, h, 0), d1(values, h, 1)])


# ---------------------------------------------------------------------------
# Christoffel symbols of the transversal metric


@dataclass(frozen=True)
class ChristoffelData:
    """Gamma^m_{ij} of ghat at every node, shape (2, 2, 2, nx, ny) with
    index order [m, i, j]; symmetric in (i, j) by construction."""

    grid: Grid
    gamma: np.ndarray


def christoffel_hat(
    metric: MetricSpec,
    grid: Grid,
    use_fd: bool = False,
    fd_step: float = 1e-5,
) -> ChristoffelData:
    """Christoffel symbols of ghat from analytic component derivatives, or
    from central differences of the evaluators when ``use_fd`` is set (the
    step is independent of the grid spacing)."""
    x1, x2 = grid.x1, grid.x2
    g = metric.ghat(x1, x2)
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if np.any(det <= 0) or np.any(g[0, 0] + g[1, 1] <= 0):
        raise MetricInvalidError("transversal metric not SPD on the grid")
    ginv, _ = metric.ghat_inv_det(x1, x2)
    if use_fd:
        dg = np.empty((2, 2, 2) + x1.shape)
        for r, (e1, e2) in enumerate(((fd_step, 0.0), (0.0, fd_step))):
            gp = metric.ghat(x1 + e1, x2 + e2)
            gm = metric.ghat(x1 - e1, x2 - e2)
            dg[:, :, r] = (gp - gm) / (2.0 * fd_step)
    else:
        dg = metric.ghat_deriv(x1, x2)
    # Gamma^m_{ij} = 1/2 ginv^{mr} (dg_{ir}/dx_j + dg_{jr}/dx_i - dg_{ij}/dx_r)
    bracket = (
        np.einsum("irj...->rij...", dg)
        + np.einsum("jri...->rij...", dg)
        - np.einsum("ijr...->rij...", dg)
    )
    gamma = 0.5 * np.einsum("mr...,rij...->mij...", ginv, bracket)
    gamma[:, 0, 1] = gamma[:, 1, 0] = 0.5 * (gamma[:, 0, 1] + gamma[:, 1, 0])
    return ChristoffelData(grid, gamma)


# ---------------------------------------------------------------------------
# first-order operators


def grad_hat(u: ScalarField, metric: MetricSpec, grid: Grid) -> VectorField:
    """Riemannian gradient (ghat^{ij} d_j u) of the transversal metric."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    du = gradient_raw(u.values, grid.h)
    comp = np.einsum("ij...,j...->i...", ginv, du)
    return VectorField(grid, comp[0], comp[1])


def norm_grad_sq_hat(u: ScalarField, metric: MetricSpec, grid: Grid) -> ScalarField:
    """|grad u|^2 in the transversal metric."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    du = gradient_raw(u.values, grid.h)
    return ScalarField(grid, np.einsum("ij...,i...,j...->...", ginv, du, du))


def hess_hat(
    u: ScalarField,
    metric: MetricSpec,
    grid: Grid,
    christoffel: ChristoffelData | None = None,
) -> np.ndarray:
    """Riemannian Hessian (d^2_{ij} u - Gamma^m_{ij} d_m u), shape
    (2, 2, nx, ny)."""
    if christoffel is None:
        christoffel = christoffel_hat(metric, grid)
    H = hessian_raw(u.values, grid.h)
    du = gradient_raw(u.values, grid.h)
    return H - np.einsum("mij...,m...->ij...", christoffel.gamma, du)


def laplace_beltrami_hat(
    u: ScalarField,
    metric: MetricSpec,
    grid: Grid,
    christoffel: ChristoffelData | None = None,
) -> ScalarField:
    """Trace of the Riemannian Hessian in the transversal metric."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    H = hess_hat(u, metric, grid, christoffel)
    return ScalarField(grid, np.einsum("ij...,ij...->...", ginv, H))


def div_hat(X: VectorField, metric: MetricSpec, grid: Grid) -> ScalarField:
    """Riemannian divergence d_i X^i + X^i Gamma^k_{ik} of ghat."""
    chr_ = christoffel_hat(metric, grid)
    trace_gamma = np.einsum("kik...->i...", chr_.gamma)
    comp = np.stack([X.v1, X.v2])
    div = (
        d1(X.v1, grid.h, 0)
        + d1(X.v2, grid.h, 1)
        + np.einsum("i...,i...->...", comp, trace_gamma)
    )
    return ScalarField(grid, div)


# ---------------------------------------------------------------------------
# quadrature with the Riemannian volume form dV = |ghat|^(1/2) dx


def trapezoid_weights(grid: Grid) -> np.ndarray:
    """Tensor-product trapezoid weights, shape (nx, ny)."""
    w1 = np.full(grid.nx, grid.h)
    w1[0] = w1[-1] = grid.h / 2.0
    w2 = np.full(grid.ny, grid.h)
    w2[0] = w2[-1] = grid.h / 2.0
    return np.outer(w1, w2)


def volume_element(metric: MetricSpec, grid: Grid) -> np.ndarray:
    _, det = metric.ghat_inv_det(grid.x1, grid.x2)
    return np.sqrt(det)


def integrate_volume(values: np.ndarray, metric: MetricSpec, grid: Grid) -> float:
    """Trapezoid quadrature of ``values`` against |ghat|^(1/2) dx."""
    return float(
        np.sum(np.asarray(values) * volume_element(metric, grid) * trapezoid_weights(grid))
    )


def side_integral(
    trace_values: np.ndarray, metric: MetricSpec, grid: Grid, side: str
) -> float:
    """Trapezoid quadrature of a full-side trace (corners included) against
    the boundary measure |ghat|^(1/2) ds inherited from dV."""
    i, j = grid.side_indices(side, include_corners=True)
    sqrtdet = volume_element(metric, grid)[i, j]
    w = np.full(len(i), grid.h)
    w[0] = w[-1] = grid.h / 2.0
    return float(np.sum(trace_values * sqrtdet * w))


# ---------------------------------------------------------------------------
# boundary traces


def normal_derivative_side(
    values: np.ndarray, grid: Grid, side: str, metric: MetricSpec
) -> np.ndarray:
    """Conormal trace ghat^{ij} d_i u nu_j along a full side (corners
    included), with the one-sided 3-point normal stencil."""
    h = grid.h
    v = values
    du = [None, None]  # coordinate derivatives d_1 u, d_2 u on the side
    if side == "left":
        du[0] = (-3.0 * v[0, :] + 4.0 * v[1, :] - v[2, :]) / (2.0 * h)
        du[1] = d1(v[0, :], h, 0)
    elif side == "right":
        du[0] = (3.0 * v[-1, :] - 4.0 * v[-2, :] + v[-3, :]) / (2.0 * h)
        du[1] = d1(v[-1, :], h, 0)
    elif side == "bottom":
        du[1] = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * h)
        du[0] = d1(v[:, 0], h, 0)
    elif side == "top":
        du[1] = (3.0 * v[:, -1] - 4.0 * v[:, -2] + v[:, -3]) / (2.0 * h)
        du[0] = d1(v[:, -1], h, 0)
    else:
        raise ValueError(f"unknown side {side!r}")
    nu = SIDE_NORMALS[side]
    i, j = grid.side_indices(side, include_corners=True)
    ginv, _ = metric.ghat_inv_det(grid.x1[i, j], grid.x2[i, j])
    # ghat^{ij} d_i u nu_j with nu the outward Euclidean unit normal
    out = np.zeros(len(i))
    for jj in range(2):
        if nu[jj] == 0.0:
            continue
        out += nu[jj] * (ginv[0, jj] * du[0] + ginv[1, jj] * du[1])
    return out
