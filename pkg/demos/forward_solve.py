"""Solve the minimal surface equation on a curved product metric and
cross-check the three residual formulations.

Run:  python3 demos/forward_solve.py
"""

import numpy as np

from mse_lab import (
    Grid,
    boundary_data_from_callable,
    metric_preset,
    residual_F,
    residual_divergence_form,
    residual_mean_curvature,
    solve_bvp,
)
from mse_lab.forward import divergence_identity_factor


def main():
    grid = Grid(65, 65)
    metric = metric_preset("conformal_exp")
    f = boundary_data_from_callable(
        grid, lambda x1, x2: 0.05 * np.sin(np.pi * x1) * x2
    )

    print("Solving the graph equation on a 65x65 grid, preset 'conformal_exp'")
    result = solve_bvp(metric, f)
    print(f"  Newton iterations : {result.iterations}")
    print(f"  final residual    : {result.residual_norm:.3e}")
    print(f"  wall time         : {result.wall_time:.2f} s")
    print(f"  graph height range: [{result.u.values.min():.4f}, "
          f"{result.u.values.max():.4f}]")

    # the same surface seen through the three formulations
    u = result.u
    mask = grid.interior_mask
    rF = residual_F(u, metric, grid).values
    rMC = residual_mean_curvature(u, metric, grid).values
    rDV = residual_divergence_form(u, metric, grid).values
    factor = divergence_identity_factor(u, metric, grid)
    print("\nResidual formulations at the computed surface:")
    print(f"  working form        max |r| = {np.max(np.abs(rF[mask])):.3e}")
    print(f"  mean curvature      max |r| = {np.max(np.abs(rMC[mask])):.3e}")
    print(f"  divergence form     max |r| = {np.max(np.abs(rDV[mask])):.3e}")
    defect = np.max(np.abs((rDV - factor * rF)[mask]))
    print(f"  pointwise identity defect (div vs -c^-2 eta^-3 * working): "
          f"{defect:.3e}")
    print("\nThe defect is pure discretization error; refine the grid and it"
          " shrinks at second order (see the convergence CLI subcommand).")


if __name__ == "__main__":
    main()
