"""Linearizations of the minimal surface problem at the trivial solution.

The first linearization at u = 0 is the advection-diffusion equation
``-laplace_hat v + X . grad v = 0`` with the drift field

    X^j = (1 - n) / (2 c(x', 0)) ghat^{ij} d_i c(x', 0),

the second linearization adds the zero-boundary source coming from the
third height derivative of the conformal factor, and higher linearizations
are extracted from the nonlinear solver by mixed finite differences in the
boundary-data amplitudes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .errors import AdjointConstructionError, ConfigError, StencilEscapeError
from .forward import SolverOptions, solve_bvp
from .geometry import (
    ChristoffelData,
    christoffel_hat,
    d1,
    d1_inward,
    div_hat,
    gradient_raw,
)
from .grid import BoundaryData, Grid, ScalarField, VectorField, gamma_mask
from .metrics import MetricSpec
from .operators import assemble_operator, solve_dirichlet

#: acceptance threshold for the adjoint solution at the probe point,
#: relative to its sup norm
ADJOINT_PROBE_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# advection field and scalar potential of the linearized operator


def advection_field(metric: MetricSpec, grid: Grid) -> VectorField:
    """Drift X^j = (1-n)/(2 c) ghat^{ij} d_i c evaluated on the surface."""
    x1, x2 = grid.x1, grid.x2
    ginv, _ = metric.ghat_inv_det(x1, x2)
    c0 = metric.c_at(x1, x2, 0.0)
    w = np.stack([metric.c.dx(i, x1, x2, 0.0) for i in range(2)])
    alpha = (1.0 - metric.n) / (2.0 * c0)
    comp = alpha * np.einsum("ij...,i...->j...", ginv, w)
    return VectorField(grid, comp[0], comp[1])


def advection_potential(metric: MetricSpec, grid: Grid) -> ScalarField:
    """Riemannian divergence q = div_hat X of the drift field, from analytic
    derivatives of the metric data."""
    x1, x2 = grid.x1, grid.x2
    ginv, _ = metric.ghat_inv_det(x1, x2)
    dg = metric.ghat_deriv(x1, x2)
    # d_j ghat^{im} = - ghat^{ia} (d_j ghat_{ab}) ghat^{bm}
    dginv = -np.einsum("ia...,abj...,bm...->imj...", ginv, dg, ginv)
    c0 = metric.c_at(x1, x2, 0.0)
    w = np.stack([metric.c.dx(i, x1, x2, 0.0) for i in range(2)])
    ddc = np.stack(
        [
            np.stack([metric.c.dxdx(i, j, x1, x2, 0.0) for j in range(2)])
            for i in range(2)
        ]
    )
    alpha = (1.0 - metric.n) / (2.0 * c0)
    chr_ = christoffel_hat(metric, grid)
    trace_gamma = np.einsum("kjk...->j...", chr_.gamma)
    grad_c_sq = np.einsum("ij...,i...,j...->...", ginv, w, w)
    # div(alpha Y) = alpha (div Y) + Y . grad alpha, Y = ghat^{-1} grad c
    div_y = (
        np.einsum("jij...,i...->...", dginv, w)
        + np.einsum("ji...,ij...->...", ginv, ddc)
        + np.einsum("ji...,i...,j...->...", ginv, w, trace_gamma)
    )
    q = alpha * (div_y - grad_c_sq / c0)
    return ScalarField(grid, q)


@dataclass(frozen=True)
class AdvectionOperatorSpec:
    """Coefficient bundle of the linearized operator on one grid."""

    grid: Grid
    X: VectorField
    q: ScalarField
    christoffel: ChristoffelData


def advection_spec(metric: MetricSpec, grid: Grid) -> AdvectionOperatorSpec:
    return AdvectionOperatorSpec(
        grid=grid,
        X=advection_field(metric, grid),
        q=advection_potential(metric, grid),
        christoffel=christoffel_hat(metric, grid),
    )


def _linearized_matrix(
    metric: MetricSpec,
    grid: Grid,
    delta_advection: VectorField | None = None,
) -> sps.csr_matrix:
    """Sparse matrix of v -> -laplace_hat v + (X + delta) . grad v."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    chr_ = christoffel_hat(metric, grid)
    X = advection_field(metric, grid)
    B = np.einsum("ij...,mij...->m...", ginv, chr_.gamma)
    B[0] += X.v1
    B[1] += X.v2
    if delta_advection is not None:
        B[0] += delta_advection.v1
        B[1] += delta_advection.v2
    return assemble_operator(grid, -ginv, B)


# ---------------------------------------------------------------------------
# first and second linearization solves


def first_lin_solve(
    metric: MetricSpec,
    f: BoundaryData | np.ndarray,
    grid: Grid | None = None,
    delta_advection: VectorField | None = None,
    source: np.ndarray | None = None,
) -> ScalarField:
    """Solve the first linearization with Dirichlet trace ``f``.

    ``f`` may be a BoundaryData or a raw full-grid array of boundary values
    (the equation is linear, so no smallness cap applies)."""
    if isinstance(f, BoundaryData):
        grid = f.grid
        bvals = f.values
    else:
        if grid is None:
            raise ConfigError("grid required when f is a raw array")
        bvals = np.asarray(f, dtype=float)
    matrix = _linearized_matrix(metric, grid, delta_advection)
    return ScalarField(grid, solve_dirichlet(matrix, grid, bvals, source))


def second_lin_source(
    metric: MetricSpec, v_k: ScalarField, v_l: ScalarField
) -> ScalarField:
    """Quadratic source (n-1)/(2c) d^3c/dxn^3 (x',0) v_k v_l."""
    grid = v_k.grid
    c0 = metric.c_at(grid.x1, grid.x2, 0.0)
    c3 = metric.c.dn(3, grid.x1, grid.x2, 0.0)
    coeff = (metric.n - 1.0) / (2.0 * c0) * np.broadcast_to(c3, grid.shape())
    return ScalarField(grid, coeff * v_k.values * v_l.values)


def second_lin_solve(
    metric: MetricSpec,
    v_k: ScalarField,
    v_l: ScalarField,
    ctilde=None,
) -> ScalarField:
    """Solve the second linearization with zero boundary trace.

    With ``ctilde`` the metric is replaced by ctilde * g, so both the
    operator drift and the source use the composed conformal factor."""
    full = metric.with_factor(ctilde) if ctilde is not None else metric
    grid = v_k.grid
    src = second_lin_source(full, v_k, v_l)
    matrix = _linearized_matrix(full, grid)
    zero = np.zeros(grid.shape())
    return ScalarField(grid, solve_dirichlet(matrix, grid, zero, -src.values))


# ---------------------------------------------------------------------------
# higher-order linearizations by mixed finite differences


def _combine_boundary_data(fs, signs, eps) -> BoundaryData:
    grid = fs[0].grid
    vals = np.zeros(grid.shape())
    for f, s, e in zip(fs, signs, eps):
        vals += s * e * f.values
    supports = {f.support for f in fs}
    support = supports.pop() if len(supports) == 1 else "all"
    cap = fs[0].delta_cap
    if np.max(np.abs(vals)) >= cap:
        raise StencilEscapeError(
            f"stencil point exceeds the smallness cap {cap:.3g}"
        )
    return BoundaryData(grid, vals, support, cap)


def higher_lin_fd(
    metric: MetricSpec,
    fs: list[BoundaryData],
    eps,
    opts: SolverOptions | None = None,
    richardson: bool = False,
) -> ScalarField:
    """Mixed derivative d^N u / (d eps_1 .. d eps_N) at zero amplitudes.

    Uses the tensor central stencil over the 2^N sign combinations; with
    ``richardson`` a second pass at half the steps removes the leading
    O(eps^2) error."""
    N = len(fs)
    if not 1 <= N <= 4:
        raise ConfigError("mixed finite differences support orders 1..4")
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (N,))
    if np.any(eps <= 0):
        raise ConfigError("stencil steps must be positive")
    grid = fs[0].grid

    def estimate(steps):
        total = np.zeros(grid.shape())
        for signs in itertools.product((-1.0, 1.0), repeat=N):
            f = _combine_boundary_data(fs, signs, steps)
            res = solve_bvp(metric, f, opts)
            total += np.prod(signs) * res.u.values
        return total / np.prod(2.0 * steps)

    out = estimate(eps)
    if richardson:
        fine = estimate(eps / 2.0)
        out = (4.0**N * fine - out) / (4.0**N - 1.0)
    return ScalarField(grid, out)


# ---------------------------------------------------------------------------
# adjoint-type special solutions


def _adjoint_matrix(metric: MetricSpec, grid: Grid) -> sps.csr_matrix:
    """Matrix of v -> laplace_hat v + X . grad v + q v."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    chr_ = christoffel_hat(metric, grid)
    X = advection_field(metric, grid)
    B = -np.einsum("ij...,mij...->m...", ginv, chr_.gamma)
    B[0] += X.v1
    B[1] += X.v2
    q = advection_potential(metric, grid)
    return assemble_operator(grid, ginv, B, q.values)


def _full_data_candidates(grid: Grid, count: int):
    """Boundary traces of smooth strictly positive functions."""
    yield np.where(grid.boundary_mask, 1.0, 0.0)
    for k in range(1, count):
        vals = 1.0 + 0.4 * np.cos(k * np.pi * grid.x1) * np.cos(k * np.pi * grid.x2)
        yield np.where(grid.boundary_mask, vals, 0.0)


def _partial_data_candidates(grid: Grid, gamma: str, count: int):
    """Nonnegative bumps supported strictly inside gamma.

    Window endpoints are fixed fractions of the arc length (at least a
    two-node buffer on the working grid sizes), so the trace describes the
    same continuum function on every grid -- a prerequisite for comparing
    or extrapolating the resulting solutions across resolutions."""
    mask = gamma_mask(grid, gamma)
    gi, gj = np.nonzero(mask)
    if len(gi) < 7:
        raise AdjointConstructionError(
            f"boundary subset {gamma!r} too small for a buffered bump"
        )
    order = np.lexsort((gj, gi))
    gi, gj = gi[order], gj[order]
    m = len(gi)
    x1v, x2v = grid.x1[gi, gj], grid.x2[gi, gj]
    if np.ptp(x1v) == 0.0:
        t = x2v
    elif np.ptp(x2v) == 0.0:
        t = x1v
    else:
        t = np.arange(m) / (m - 1)
    for k in range(count):
        lo = 0.04 + 0.06 * (k % 3)
        hi = 0.96 - 0.05 * (k % 2)
        s = np.clip((t - lo) / (hi - lo), 0.0, 1.0)
        vals = np.zeros(grid.shape())
        vals[gi, gj] = np.sin(np.pi * s) ** 2 * ((t > lo) & (t < hi))
        yield vals


def adjoint_special_solution(
    metric: MetricSpec,
    grid: Grid,
    x0: tuple[float, float],
    gamma: str = "all",
    max_candidates: int = 8,
) -> ScalarField:
    """Solution of ``laplace_hat v + X . grad v + q v = 0`` that is
    non-negligible at the probe point ``x0``.

    Full-data mode sweeps positive boundary traces; partial-data mode
    (gamma a side or arc) sweeps bumps supported inside gamma with a
    two-node buffer, so the trace vanishes identically outside gamma.
    Raises AdjointConstructionError when every candidate degenerates at x0.
    """
    i0 = int(round(x0[0] / grid.h))
    j0 = int(round(x0[1] / grid.h))
    if not (0 < i0 < grid.nx - 1 and 0 < j0 < grid.ny - 1):
        raise ConfigError(f"probe point {x0} is not an interior node")
    matrix = _adjoint_matrix(metric, grid)
    if gamma == "all":
        candidates = _full_data_candidates(grid, max_candidates)
    else:
        candidates = _partial_data_candidates(grid, gamma, max_candidates)
    probes = []
    for bvals in candidates:
        v = solve_dirichlet(matrix, grid, bvals)
        vmax = float(np.max(np.abs(v)))
        val = float(v[i0, j0])
        if vmax > 0 and abs(val) >= ADJOINT_PROBE_FLOOR * vmax:
            return ScalarField(grid, v)
        probes.append(val)
    raise AdjointConstructionError(
        f"no admissible special solution at probe {x0}; values {probes}"
    )


# ---------------------------------------------------------------------------
# magnetic Schroedinger rewriting of the advection-diffusion operator


@dataclass(frozen=True)
class MagneticCoeffs:
    """Magnetic potential A = i X / 2 (stored as the real field X/2 with an
    imaginary flag) and scalar potential q."""

    grid: Grid
    A: VectorField
    q: ScalarField
    imaginary: bool = True


def advection_to_magnetic(
    X: VectorField, metric: MetricSpec, grid: Grid
) -> MagneticCoeffs:
    """Coefficients with q = 1/4 ghat(X, X) - 1/2 div_hat X, so that the
    magnetic operator expands to ``-laplace_hat u + X . grad u``."""
    g = metric.ghat(grid.x1, grid.x2)
    comp = np.stack([X.v1, X.v2])
    norm_sq = np.einsum("ij...,i...,j...->...", g, comp, comp)
    div = div_hat(X, metric, grid)
    q = 0.25 * norm_sq - 0.5 * div.values
    return MagneticCoeffs(
        grid=grid,
        A=VectorField(grid, 0.5 * X.v1, 0.5 * X.v2),
        q=ScalarField(grid, q),
    )


def magnetic_operator_apply(
    u: ScalarField, coeffs: MagneticCoeffs, metric: MetricSpec, grid: Grid
) -> ScalarField:
    """Expanded magnetic Schroedinger operator applied to a real field.

    Computes -|g|^(-1/2) (d_j + iA_j)(|g|^(1/2) g^{jk} (d_k + iA_k) u) + q u
    with the covariant potential A_j = i ghat_{jl} X^l / 2; the imaginary
    units cancel, so everything stays real."""
    g = metric.ghat(grid.x1, grid.x2)
    ginv, det = metric.ghat_inv_det(grid.x1, grid.x2)
    sqrt_det = np.sqrt(det)
    Xc = np.stack([2.0 * coeffs.A.v1, 2.0 * coeffs.A.v2])  # contravariant X
    Xlow = np.einsum("jl...,l...->j...", g, Xc)
    du = gradient_raw(u.values, grid.h)
    inner = du - 0.5 * Xlow * u.values  # (d_k + iA_k) u, i^2 = -1
    flux = sqrt_det * np.einsum("jk...,k...->j...", ginv, inner)
    div_flux = d1_inward(flux[0], grid.h, 0) + d1_inward(flux[1], grid.h, 1)
    out = (
        -div_flux / sqrt_det
        + 0.5 * np.einsum("j...,j...->...", Xlow, flux) / sqrt_det
        + coeffs.q.values * u.values
    )
    return ScalarField(grid, out)
