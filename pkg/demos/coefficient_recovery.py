"""Recover the cubic and quartic surface coefficients of the conformal
factor from boundary data, via the integral identity.

The data metric is ctilde * g with ctilde = 1 + xn^3 c3 / 6 + xn^4 c4 / 24;
second-linearization mismatches pair with adjoint solutions to give linear
functionals of c3, which a spline least-squares solve inverts.  The quartic
coefficient follows the same route after subtracting the recovered cubic
term (the induction step).

Run:  python3 demos/coefficient_recovery.py
"""

import time

import numpy as np

from mse_lab import ConformalFactor, Grid, metric_preset
from mse_lab.recovery import recover_taylor_sequence


def main():
    grid = Grid(65, 65)
    metric = metric_preset("euclidean")
    ctilde = ConformalFactor.from_parts(
        "1", {3: "sin(pi*x1)*sin(pi*x2)", 4: "1 + x1*x2"}
    )

    print("Recovering orders 3 and 4 on a 65x65 grid, 24 solution pairs")
    t0 = time.perf_counter()
    result = recover_taylor_sequence(
        metric, ctilde, grid, orders=(3, 4), num_pairs=24, num_adjoints=5
    )
    print(f"  wall time: {time.perf_counter() - t0:.1f} s")

    truths = {
        3: np.sin(np.pi * grid.x1) * np.sin(np.pi * grid.x2),
        4: 1.0 + grid.x1 * grid.x2,
    }
    mask = grid.interior_mask
    for k in (3, 4):
        rec = result.coeff_fields[k].values
        rel = np.linalg.norm((rec - truths[k])[mask]) / np.linalg.norm(
            truths[k][mask]
        )
        diag = result.diagnostics[k]
        print(f"  order {k}: interior rel L2 error {rel:.2%}  "
              f"(rows {diag['n_rows']}, Gram condition "
              f"{diag['gram_condition']:.1e})")
    print("\nThe quartic error is larger because it inherits the cubic"
          " reconstruction error through the reference-metric subtraction.")


if __name__ == "__main__":
    main()
