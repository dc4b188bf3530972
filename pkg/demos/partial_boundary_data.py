"""Coefficient recovery when data live on one side of the square only.

All boundary data and adjoint traces are supported on the left edge; the
identity functionals then weigh the far part of the domain exponentially
weakly, so the least-squares system needs regularization (row equilibration
plus a Tikhonov filter) and Richardson extrapolation of the identity
functionals to be usable at all.

Run:  python3 demos/partial_boundary_data.py
"""

import time

import numpy as np

from mse_lab import ConformalFactor, Grid, metric_preset
from mse_lab.recovery import recover_taylor_sequence


def main():
    grid = Grid(65, 65)
    metric = metric_preset("euclidean")
    ctilde = ConformalFactor.from_parts("1", {3: "sin(pi*x1)*sin(pi*x2)"})
    true = np.sin(np.pi * grid.x1) * np.sin(np.pi * grid.x2)
    mask = grid.interior_mask

    def rel(field):
        return np.linalg.norm((field.values - true)[mask]) / np.linalg.norm(
            true[mask]
        )

    print("Full boundary, 24 pairs, plain least squares:")
    t0 = time.perf_counter()
    full = recover_taylor_sequence(metric, ctilde, grid, orders=(3,))
    print(f"  rel error {rel(full.coeff_fields[3]):.2%} "
          f"({time.perf_counter() - t0:.1f} s)")

    print("\nLeft edge only, 36 pairs, 8 adjoints, Tikhonov + Richardson:")
    t0 = time.perf_counter()
    part = recover_taylor_sequence(
        metric, ctilde, grid, orders=(3,), num_pairs=36, num_adjoints=8,
        gamma="left", richardson=True,
    )
    print(f"  rel error {rel(part.coeff_fields[3]):.2%} "
          f"({time.perf_counter() - t0:.1f} s)")

    print(
        "\nThe one-sided reconstruction is roughly an order of magnitude"
        "\nless accurate than the full-data one.  The limit is the residual"
        "\nO(h^2) defect of the discrete integral identity: after Richardson"
        "\nextrapolation a relative noise floor of a few 1e-4 remains (corner"
        "\neffects of the square domain), and the ill-conditioned one-sided"
        "\nfunctionals amplify it far more than the full-data ones do."
    )


if __name__ == "__main__":
    main()
