"""Dirichlet-to-Neumann data for the nonlinear problem.

The conormal trace is ghat^{ij} d_i u nu_j with nu the outward Euclidean
unit normal of the square side; corner nodes carry no measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MseLabError
from .forward import SolverOptions, solve_bvp
from .geometry import normal_derivative_side
from .grid import SIDES, BoundaryData, Grid, ScalarField, gamma_mask, gamma_nodes
from .metrics import MetricSpec


@dataclass(frozen=True)
class DNRecord:
    """Paired Dirichlet datum and Neumann trace on gamma."""

    f: BoundaryData
    neumann: np.ndarray
    gamma: str
    nodes_i: np.ndarray
    nodes_j: np.ndarray
    manifest: dict = field(default_factory=dict)


def neumann_trace(
    u: ScalarField, metric: MetricSpec, grid: Grid, gamma: str = "all"
) -> np.ndarray:
    """Conormal derivative on the non-corner nodes of gamma, ordered as
    :func:`mse_lab.grid.gamma_nodes`."""
    mask = gamma_mask(grid, gamma)
    out = np.full(grid.shape(), np.nan)
    for side in SIDES:
        i, j = grid.side_indices(side, include_corners=False)
        if not mask[i, j].any():
            continue
        full = normal_derivative_side(u.values, grid, side, metric)
        # full includes corners; non-corner nodes sit at positions 1..-2
        out[i, j] = full[1:-1]
    gi, gj = gamma_nodes(grid, gamma)
    return out[gi, gj]


def full_side_trace(
    u: ScalarField, metric: MetricSpec, grid: Grid, side: str
) -> np.ndarray:
    """Conormal trace along a full side, corners included (quadrature use)."""
    return normal_derivative_side(u.values, grid, side, metric)


def dn_map(
    metric: MetricSpec,
    f: BoundaryData,
    gamma: str = "all",
    opts: SolverOptions | None = None,
) -> DNRecord:
    """Solve the Dirichlet problem for f and trace the conormal derivative
    on gamma."""
    grid = f.grid
    if gamma != "all":
        allowed = gamma_mask(grid, gamma)
        if np.any(f.values[grid.boundary_mask & ~allowed] != 0.0):
            raise ValueError(
                f"partial-data run: boundary datum not supported in {gamma!r}"
            )
    result = solve_bvp(metric, f, opts)
    gi, gj = gamma_nodes(grid, gamma)
    return DNRecord(
        f=f,
        neumann=neumann_trace(result.u, metric, grid, gamma),
        gamma=gamma,
        nodes_i=gi,
        nodes_j=gj,
        manifest={
            "residual_norm": result.residual_norm,
            "iterations": result.iterations,
            "wall_time": result.wall_time,
        },
    )


def dn_batch(
    metric: MetricSpec,
    family,
    gamma: str = "all",
    opts: SolverOptions | None = None,
) -> list[DNRecord]:
    """Element-wise dn_map over a family of boundary data, deterministic
    ordering, fail-fast with the index of the failing datum."""
    records = []
    for k, f in enumerate(family):
        try:
            records.append(dn_map(metric, f, gamma, opts))
        except MseLabError as exc:
            raise type(exc)(f"datum {k}: {exc}") from exc
    return records
