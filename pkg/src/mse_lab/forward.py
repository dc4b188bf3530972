"""Minimal-surface residuals and the quasilinear Dirichlet solver.

Three residual routes are provided: the working form used by the Newton
solver (transversal-metric operators with the conformal factor sampled at
the graph height), the mean-curvature form assembled from the full
product-metric Christoffel symbols, and the divergence form.  The latter
two use genuinely independent discretizations (metric derivatives by
central differences with step h, discrete divergence of the flux field),
so agreement between the routes is an O(h^2) statement, not an algebraic
identity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .errors import DomainEscapeError, NewtonDivergenceError
from .geometry import (
    ChristoffelData,
    christoffel_hat,
    d1,
    gradient_raw,
    hessian_raw,
)
from .grid import BoundaryData, Grid, ScalarField
from .metrics import MetricSpec
from .operators import assemble_operator, lu_factorization, solve_dirichlet, sparse_solve


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    max_newton_iters: int = 30
    damping_factor: float = 0.5
    max_halvings: int = 20
    jacobian_perturbation: float = 1e-7

    def __post_init__(self):
        if self.newton_tol <= 0 or self.max_newton_iters < 1:
            raise ValueError("need newton_tol > 0 and max_newton_iters >= 1")


# ---------------------------------------------------------------------------
# residual formulations


def _hat_pieces(u_vals: np.ndarray, metric: MetricSpec, grid: Grid,
                christoffel: ChristoffelData | None = None):
    """Shared transversal-metric quantities for the residual formulas."""
    if christoffel is None:
        christoffel = christoffel_hat(metric, grid)
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    du = gradient_raw(u_vals, grid.h)
    Hhat = hessian_raw(u_vals, grid.h) - np.einsum(
        "mij...,m...->ij...", christoffel.gamma, du
    )
    lap = np.einsum("ij...,ij...->...", ginv, Hhat)
    S = np.einsum("ij...,i...,j...->...", ginv, du, du)
    G = np.einsum("ij...,j...->i...", ginv, du)
    bilin = np.einsum("ij...,i...,j...->...", Hhat, G, G)
    return ginv, du, lap, S, G, bilin


def residual_F(
    u: ScalarField,
    metric: MetricSpec,
    grid: Grid,
    christoffel: ChristoffelData | None = None,
) -> ScalarField:
    """Working residual form: transversal operators with the conformal
    factor and its derivatives sampled at height xn = u(x')."""
    n = metric.n
    x1, x2 = grid.x1, grid.x2
    ginv, du, lap, S, _G, bilin = _hat_pieces(u.values, metric, grid, christoffel)
    c = metric.c_at(x1, x2, u.values)
    dc = np.stack([metric.c.dx(i, x1, x2, u.values) for i in range(2)])
    dnc = metric.c.dn(1, x1, x2, u.values)
    adv = (1 - n) / (2.0 * c) * np.einsum("mr...,r...,m...->...", ginv, dc, du)
    height = (n - 1) / (2.0 * c) * dnc
    out = (-lap + adv + height) * (1.0 + S) + bilin
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


def residual_mean_curvature(
    u: ScalarField, metric: MetricSpec, grid: Grid
) -> ScalarField:
    """Mean-curvature residual of the level set xn - u(x') = 0, scaled by
    c^2: full product-metric Christoffel symbols, with all metric
    derivatives taken by central differences of step h."""
    x1, x2 = grid.x1, grid.x2
    h = grid.h
    uv = u.values
    c = metric.c_at(x1, x2, uv)

    def g3(a, b, height):
        """Product metric components at (a, b, height), shape (3,3,...)."""
        gh = metric.ghat(a, b)
        cc = metric.c(a, b, height)
        out = np.zeros((3, 3) + np.shape(cc))
        out[:2, :2] = cc * gh
        out[2, 2] = cc
        return out

    # dg[i, j, r] = d g_{ij} / d x_r at (x', u(x')), central differences
    dg = np.empty((3, 3, 3) + uv.shape)
    dg[:, :, 0] = (g3(x1 + h, x2, uv) - g3(x1 - h, x2, uv)) / (2.0 * h)
    dg[:, :, 1] = (g3(x1, x2 + h, uv) - g3(x1, x2 - h, uv)) / (2.0 * h)
    dg[:, :, 2] = (g3(x1, x2, uv + h) - g3(x1, x2, uv - h)) / (2.0 * h)

    ghinv, _ = metric.ghat_inv_det(x1, x2)
    ginv3 = np.zeros((3, 3) + uv.shape)
    ginv3[:2, :2] = ghinv / c
    ginv3[2, 2] = 1.0 / c

    # Gamma^m_{ij} = 1/2 g^{ml} (d_i g_{jl} + d_j g_{il} - d_l g_{ij})
    term = (
        np.einsum("jli...->lij...", dg)
        + np.einsum("ilj...->lij...", dg)
        - np.einsum("ijl...->lij...", dg)
    )
    gamma = 0.5 * np.einsum("ml...,lij...->mij...", ginv3, term)

    df = np.empty((3,) + uv.shape)
    df[0] = -d1(uv, h, 0)
    df[1] = -d1(uv, h, 1)
    df[2] = 1.0
    ddf = np.zeros((3, 3) + uv.shape)
    ddf[:2, :2] = -hessian_raw(uv, h)

    hess_f = ddf - np.einsum("mij...,m...->ij...", gamma, df)
    grad_f = np.einsum("ai...,i...->a...", ginv3, df)
    norm_sq = np.einsum("i...,i...->...", grad_f, df)
    lap_f = np.einsum("ij...,ij...->...", ginv3, hess_f)
    bil = np.einsum("ij...,i...,j...->...", hess_f, grad_f, grad_f)

    out = c**2 * (norm_sq * lap_f - bil)
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


def _shifted(arr: np.ndarray, d: int, axis: int) -> np.ndarray:
    """Index-shifted view with clamped edges (clamped rows are only read
    where the one-sided formulas do not use them)."""
    n = arr.shape[axis]
    idx = np.clip(np.arange(n) + d, 0, n - 1)
    return np.take(arr, idx, axis=axis)


def _derivative_from_sampler(sample, h: float, axis: int) -> np.ndarray:
    """Second-order derivative along ``axis`` of a field given through a
    shift-sampler ``sample(d)``.

    The two rows nearest each edge use one-sided stencils pointing inward,
    so the flux is never sampled on the boundary row itself (whose discrete
    gradient comes from a different stencil and would cost one order)."""
    ph = {d: sample(d) for d in (-2, -1, 0, 1, 2)}
    out = (ph[1] - ph[-1]) / (2.0 * h)
    n = out.shape[axis]
    for k in (0, 1):
        lo = [slice(None)] * out.ndim
        hi = [slice(None)] * out.ndim
        lo[axis] = k
        hi[axis] = n - 1 - k
        lo, hi = tuple(lo), tuple(hi)
        out[lo] = (-3.0 * ph[0][lo] + 4.0 * ph[1][lo] - ph[2][lo]) / (2.0 * h)
        out[hi] = (3.0 * ph[0][hi] - 4.0 * ph[-1][hi] + ph[-2][hi]) / (2.0 * h)
    return out


def residual_divergence_form(
    u: ScalarField, metric: MetricSpec, grid: Grid
) -> ScalarField:
    """Divergence-form residual: the flux of the normalized gradient is
    differenced discretely (product and chain rules are left to the grid,
    not expanded algebraically), then the lower-order bracket is added."""
    n = metric.n
    x1, x2 = grid.x1, grid.x2
    h = grid.h
    uv = u.values
    ginv, det = metric.ghat_inv_det(x1, x2)
    du = gradient_raw(uv, h)
    G = np.einsum("ij...,j...->i...", ginv, du)  # transversal gradient
    S0 = np.einsum("i...,i...->...", G, du)  # |grad u|^2 in ghat
    c = metric.c_at(x1, x2, uv)

    def flux_sampler(comp: int, axis: int):
        """a^comp sampled at nodes shifted by d along ``axis``, at the fixed
        height xn = u(center node)."""

        def sample(d: int) -> np.ndarray:
            Gs = _shifted(G[comp], d, axis)
            Ss = _shifted(S0, d, axis)
            a = x1 + d * h if axis == 0 else x1
            b = x2 + d * h if axis == 1 else x2
            cs = metric.c(a, b, uv)
            return Gs / (cs * np.sqrt(1.0 + Ss / cs))

        return sample

    div = _derivative_from_sampler(flux_sampler(0, 0), h, 0) + \
        _derivative_from_sampler(flux_sampler(1, 1), h, 1)

    # contracted Christoffel sum_{i=1..n} Gamma^i_{ij} of the product metric
    dghat = metric.ghat_deriv(x1, x2)
    tr_dlog = 0.5 * np.einsum("ij...,ijr...->r...", ginv, dghat)
    dc = np.stack([metric.c.dx(i, x1, x2, uv) for i in range(2)])
    gamma_tot = tr_dlog + (n / (2.0 * c)) * dc
    eta = np.sqrt(1.0 + S0 / c)
    a_comp = G / (c * eta[None])
    div = div + np.einsum("j...,j...->...", a_comp, gamma_tot)

    # lower-order bracket, conformal factor at the graph height
    dnc = metric.c.dn(1, x1, x2, uv)
    dot_cg = np.einsum("i...,i...->...", G, dc)  # ghat^{mr} d_r c d_m u
    chr_ = christoffel_hat(metric, grid)
    Hhat = hessian_raw(uv, h) - np.einsum("mij...,m...->ij...", chr_.gamma, du)
    lap_hat = np.einsum("ij...,ij...->...", ginv, Hhat)
    bracket = (
        (1.0 - c) * lap_hat
        + dot_cg * ((n - 1) / (2.0 * c) - (n - 2) / 2.0)
        - (n - 1) / (2.0 * c) * dnc * (1.0 + S0)
    ) / c**2
    out = div + bracket / eta**3
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


def divergence_identity_factor(
    u: ScalarField, metric: MetricSpec, grid: Grid
) -> np.ndarray:
    """Pointwise factor -c^-2 eta^-3 relating the working residual to the
    divergence form (the flux orientation flips the sign)."""
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    du = gradient_raw(u.values, grid.h)
    S0 = np.einsum("ij...,i...,j...->...", ginv, du, du)
    c = metric.c_at(grid.x1, grid.x2, u.values)
    eta = np.sqrt(1.0 + S0 / c)
    return -1.0 / (c**2 * eta**3)


# ---------------------------------------------------------------------------
# Newton solver


@dataclass
class SolveResult:
    u: ScalarField
    residual_norm: float
    iterations: int
    residual_history: list = field(default_factory=list)
    wall_time: float = 0.0


def _initial_guess(metric: MetricSpec, f: BoundaryData, grid: Grid) -> np.ndarray:
    """Harmonic-in-ghat extension of the boundary data (deterministic,
    cheap, inside the small-data ball for admissible f)."""
    chr_ = christoffel_hat(metric, grid)
    ginv, _ = metric.ghat_inv_det(grid.x1, grid.x2)
    B = -np.einsum("ij...,mij...->m...", ginv, chr_.gamma)
    mat = assemble_operator(grid, ginv, B)
    return solve_dirichlet(mat, grid, f.values)


def _stencil_jacobian(residual_fn, u_vals, grid: Grid, eps: float):
    """Jacobian w.r.t. interior unknowns by colored stencil perturbations
    (9-point coupling, 3x3 coloring makes the differences exact per color)."""
    nx, ny = grid.shape()
    interior = grid.interior_mask
    n_int = int(interior.sum())
    red_idx = -np.ones((nx, ny), dtype=np.int64)
    red_idx[interior] = np.arange(n_int)
    base = residual_fn(u_vals)
    I, J = np.nonzero(interior)
    rows_list, cols_list, vals_list = [], [], []
    for a in range(3):
        for b in range(3):
            pmask = interior & (np.arange(nx)[:, None] % 3 == a) & (
                np.arange(ny)[None, :] % 3 == b
            )
            if not pmask.any():
                continue
            up = u_vals + eps * pmask
            diff = (residual_fn(up) - base) / eps
            di = (a - I) % 3
            di = np.where(di == 2, -1, di)
            dj = (b - J) % 3
            dj = np.where(dj == 2, -1, dj)
            ni, nj = I + di, J + dj
            ok = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
            ok &= pmask[np.clip(ni, 0, nx - 1), np.clip(nj, 0, ny - 1)]
            rows_list.append(red_idx[I[ok], J[ok]])
            cols_list.append(red_idx[ni[ok], nj[ok]])
            vals_list.append(diff[I[ok], J[ok]])
    mat = sps.coo_matrix(
        (
            np.concatenate(vals_list),
            (np.concatenate(rows_list), np.concatenate(cols_list)),
        ),
        shape=(n_int, n_int),
    )
    return mat.tocsr(), base


def solve_bvp(
    metric: MetricSpec,
    f: BoundaryData,
    opts: SolverOptions | None = None,
    source: np.ndarray | None = None,
) -> SolveResult:
    """Solve the quasilinear Dirichlet problem by damped Newton iteration.

    ``source``, when given, is subtracted from the residual (manufactured
    solutions).  Deterministic for identical inputs."""
    opts = opts or SolverOptions()
    grid = f.grid
    t0 = time.perf_counter()
    chr_ = christoffel_hat(metric, grid)

    def res(u_vals):
        r = residual_F(ScalarField(grid, u_vals), metric, grid, chr_).values
        if source is not None:
            r = r - np.where(grid.interior_mask, source, 0.0)
        return r

    u_vals = _initial_guess(metric, f, grid)
    interior = grid.interior_mask
    r = res(u_vals)
    norm = float(np.max(np.abs(r[interior])))
    history = [norm]
    iters = 0
    while norm > opts.newton_tol and iters < opts.max_newton_iters:
        jac, base = _stencil_jacobian(res, u_vals, grid, opts.jacobian_perturbation)
        lu = lu_factorization(jac.tocsc()) if grid.nx <= 257 else None
        rhs = base[interior]
        if lu is not None:
            step = lu.solve(rhs)
        else:
            step = sparse_solve(jac, rhs)
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = u_vals.copy()
            trial[interior] -= t * step
            try:
                r_trial = res(trial)
            except DomainEscapeError:
                t *= opts.damping_factor
                continue
            norm_trial = float(np.max(np.abs(r_trial[interior])))
            if norm_trial < norm:
                u_vals, r, norm = trial, r_trial, norm_trial
                accepted = True
                break
            t *= opts.damping_factor
        if not accepted:
            raise NewtonDivergenceError(
                f"Newton stalled after {opts.max_halvings} halvings at "
                f"residual {norm:.3e}",
                last_residual=norm,
            )
        iters += 1
        history.append(norm)
    if norm > opts.newton_tol:
        raise NewtonDivergenceError(
            f"no convergence in {opts.max_newton_iters} iterations, residual "
            f"{norm:.3e}",
            last_residual=norm,
        )
    return SolveResult(
        u=ScalarField(grid, u_vals),
        residual_norm=norm,
        iterations=iters,
        residual_history=history,
        wall_time=time.perf_counter() - t0,
    )
