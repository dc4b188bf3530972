"""Sparse assembly and direct solution of second-order operators.

Interior rows discretize ``L u = A^{ij} d2_{ij} u + B^m d_m u + Q u`` with
centered stencils (9-point coupling); boundary rows are identity, carrying
Dirichlet data on the right-hand side.  Grids up to 257^2 use a sparse LU
factorization, larger ones fall back to a diagonally preconditioned
iterative solve.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import SingularOperatorError
from .grid import Grid

DIRECT_LIMIT = 257


def assemble_operator(
    grid: Grid,
    A: np.ndarray,
    B: np.ndarray | None = None,
    Q: np.ndarray | None = None,
) -> sps.csr_matrix:
    """Assemble the interior stencil plus identity boundary rows.

    ``A`` has shape (2, 2, nx, ny) and is treated as symmetric, ``B`` has
    shape (2, nx, ny), ``Q`` shape (nx, ny).
    """
    nx, ny = grid.shape()
    h = grid.h
    idx = np.arange(nx * ny).reshape(nx, ny)
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    rows_c = idx[ii, jj]

    A11 = A[0, 0][ii, jj]
    A22 = A[1, 1][ii, jj]
    Across = (A[0, 1] + A[1, 0])[ii, jj]  # total mixed coefficient
    B1 = B[0][ii, jj] if B is not None else 0.0
    B2 = B[1][ii, jj] if B is not None else 0.0
    Qc = Q[ii, jj] if Q is not None else 0.0

    rows, cols, vals = [], [], []

    def add(di, dj, coeff):
        rows.append(rows_c)
        cols.append(idx[ii + di, jj + dj])
        vals.append(np.broadcast_to(coeff, rows_c.shape).astype(float))

    add(0, 0, -2.0 * A11 / h**2 - 2.0 * A22 / h**2 + Qc)
    add(1, 0, A11 / h**2 + B1 / (2.0 * h))
    add(-1, 0, A11 / h**2 - B1 / (2.0 * h))
    add(0, 1, A22 / h**2 + B2 / (2.0 * h))
    add(0, -1, A22 / h**2 - B2 / (2.0 * h))
    add(1, 1, Across / (4.0 * h**2))
    add(-1, -1, Across / (4.0 * h**2))
    add(1, -1, -Across / (4.0 * h**2))
    add(-1, 1, -Across / (4.0 * h**2))

    bmask = grid.boundary_mask.ravel()
    brows = idx.ravel()[bmask]
    rows.append(brows)
    cols.append(brows)
    vals.append(np.ones(len(brows)))

    mat = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    )
    return mat.tocsr()


def solve_dirichlet(
    matrix: sps.csr_matrix,
    grid: Grid,
    boundary_values: np.ndarray,
    source: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``L u = source`` (interior) with ``u = boundary_values`` on the
    boundary; returns the full-grid solution array."""
    rhs = np.zeros(grid.shape())
    if source is not None:
        rhs[grid.interior_mask] = np.asarray(source)[grid.interior_mask]
    rhs[grid.boundary_mask] = np.asarray(boundary_values)[grid.boundary_mask]
    return sparse_solve(matrix, rhs.ravel()).reshape(grid.shape())


def sparse_solve(matrix: sps.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    n_side = int(round(np.sqrt(matrix.shape[0])))
    if n_side <= DIRECT_LIMIT:
        try:
            lu = spla.splu(matrix.tocsc())
        except RuntimeError as exc:
            raise SingularOperatorError(f"sparse factorization failed: {exc}") from exc
        sol = lu.solve(rhs)
    else:
        diag = matrix.diagonal()
        if np.any(diag == 0):
            raise SingularOperatorError("zero diagonal entry in iterative branch")
        M = spla.LinearOperator(matrix.shape, lambda x: x / diag)
        sol, info = spla.lgmres(matrix, rhs, M=M, atol=1e-12, rtol=1e-12, maxiter=2000)
        if info != 0:
            raise SingularOperatorError(f"iterative solve did not converge ({info=})")
    if not np.all(np.isfinite(sol)):
        raise SingularOperatorError("non-finite entries in linear solution")
    return sol


def lu_factorization(matrix: sps.csr_matrix):
    """Reusable factorization; raises if the operator is singular."""
    try:
        return spla.splu(matrix.tocsc())
    except RuntimeError as exc:
        raise SingularOperatorError(f"sparse factorization failed: {exc}") from exc
