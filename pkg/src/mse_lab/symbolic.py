"""Closed-form (sympy) evaluation of the continuous operators.

This is the exact counterpart of the discrete kernels: residuals, traces
and manufactured-solution sources are derived by symbolic differentiation,
completely independent of any finite-difference stencil.  Convergence
studies and tests compare the two routes.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .expressions import X1, X2, XN, lambdify_xy
from .grid import SIDE_NORMALS, Grid
from .metrics import MetricSpec

_SYMS = (X1, X2)


def ghat_matrix(metric: MetricSpec) -> sp.Matrix:
    return sp.Matrix(2, 2, lambda i, j: metric.exprs[i][j])


def sym_christoffel_hat(ghat: sp.Matrix):
    """Gamma^m_{ij} as nested lists of sympy expressions."""
    ginv = ghat.inv()
    gamma = [[[sp.S.Zero] * 2 for _ in range(2)] for _ in range(2)]
    for m in range(2):
        for i in range(2):
            for j in range(2):
                total = sp.S.Zero
                for r in range(2):
                    total += ginv[m, r] * (
                        sp.diff(ghat[i, r], _SYMS[j])
                        + sp.diff(ghat[j, r], _SYMS[i])
                        - sp.diff(ghat[i, j], _SYMS[r])
                    )
                gamma[m][i][j] = sp.simplify(total / 2)
    return gamma


def sym_grad_hat(u: sp.Expr, ghat: sp.Matrix):
    ginv = ghat.inv()
    du = [sp.diff(u, s) for s in _SYMS]
    return [sum(ginv[i, j] * du[j] for j in range(2)) for i in range(2)]


def sym_norm_grad_sq_hat(u: sp.Expr, ghat: sp.Matrix) -> sp.Expr:
    ginv = ghat.inv()
    du = [sp.diff(u, s) for s in _SYMS]
    return sum(ginv[i, j] * du[i] * du[j] for i in range(2) for j in range(2))


def sym_hess_hat(u: sp.Expr, ghat: sp.Matrix):
    gamma = sym_christoffel_hat(ghat)
    du = [sp.diff(u, s) for s in _SYMS]
    return [
        [
            sp.diff(u, _SYMS[i], _SYMS[j])
            - sum(gamma[m][i][j] * du[m] for m in range(2))
            for j in range(2)
        ]
        for i in range(2)
    ]


def sym_laplace_hat(u: sp.Expr, ghat: sp.Matrix) -> sp.Expr:
    ginv = ghat.inv()
    H = sym_hess_hat(u, ghat)
    return sum(ginv[i, j] * H[i][j] for i in range(2) for j in range(2))


def sym_residual(u: sp.Expr, metric: MetricSpec) -> sp.Expr:
    """Exact minimal-surface residual of the graph of ``u`` (the same
    combination the discrete kernel evaluates), with the conformal factor
    and its derivatives taken at height xn = u(x')."""
    n = sp.Integer(metric.n)
    ghat = ghat_matrix(metric)
    ginv = ghat.inv()
    c = metric.c.expr
    du = [sp.diff(u, s) for s in _SYMS]
    c_at = c.subs(XN, u)
    dc_at = [sp.diff(c, s).subs(XN, u) for s in _SYMS]
    dnc_at = sp.diff(c, XN).subs(XN, u)
    lap = sym_laplace_hat(u, ghat)
    S = sym_norm_grad_sq_hat(u, ghat)
    H = sym_hess_hat(u, ghat)
    G = [sum(ginv[i, j] * du[j] for j in range(2)) for i in range(2)]
    adv = (1 - n) / (2 * c_at) * sum(
        ginv[m, r] * dc_at[r] * du[m] for m in range(2) for r in range(2)
    )
    height = (n - 1) / (2 * c_at) * dnc_at
    bilin = sum(H[i][j] * G[i] * G[j] for i in range(2) for j in range(2))
    return (-lap + adv + height) * (1 + S) + bilin


def sym_neumann_trace(u: sp.Expr, metric: MetricSpec, side: str) -> sp.Expr:
    """Conormal derivative ghat^{ij} d_i u nu_j on one side of the square."""
    ginv = ghat_matrix(metric).inv()
    du = [sp.diff(u, s) for s in _SYMS]
    nu = SIDE_NORMALS[side]
    return sum(
        ginv[i, j] * du[i] * nu[j] for i in range(2) for j in range(2) if nu[j] != 0
    )


def evaluate_on_grid(expr: sp.Expr, grid: Grid) -> np.ndarray:
    """Evaluate a sympy expression of (x1, x2) at every node."""
    return lambdify_xy(expr)(grid.x1, grid.x2)


def mms_source(u_star: sp.Expr, metric: MetricSpec, grid: Grid) -> np.ndarray:
    """Exact residual of a manufactured solution, sampled on the grid."""
    return evaluate_on_grid(sym_residual(u_star, metric), grid)
