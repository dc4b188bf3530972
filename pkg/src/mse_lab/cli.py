"""Command-line front end.

Subcommands: forward, dn, linearize, identity-check, recover, convergence,
pipeline.  Common flags: --config (flat key=value file), --out, --seed,
--threads (falls back to the MSE_LAB_THREADS environment variable).  Every
subcommand exits nonzero on any stage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .dn import dn_batch
from .errors import ConfigError, MseLabError
from .expressions import parse_expression
from .forward import solve_bvp
from .grid import BoundaryData, Grid, boundary_data_from_callable, gamma_nodes
from .harness import (
    ConvergenceTable,
    ExperimentConfig,
    emit_plot_data,
    emit_rate_table,
    fit_rate,
    load_config,
    new_manifest,
    run_convergence_study,
    run_pipeline,
)
from .linearize import first_lin_solve, higher_lin_fd, second_lin_solve
from .metrics import metric_from_config
from .recovery import recover_taylor_sequence
from .symbolic import evaluate_on_grid


def _apply_threads(args):
    threads = args.threads or os.environ.get("MSE_LAB_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _base_cfg(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _metric_from_args(args, cfg):
    if getattr(args, "metric", None):
        if os.path.exists(args.metric):
            cfg.update(load_config(args.metric))
        else:
            cfg["metric"] = args.metric
    cfg.setdefault("metric", "euclidean")
    return metric_from_config(cfg)


def _bc_from_expression(grid: Grid, text: str, support: str = "all") -> BoundaryData:
    expr = parse_expression(text)
    return boundary_data_from_callable(
        grid, lambda x1, x2: evaluate_on_grid(expr, grid), support=support
    )


def _write_json(payload: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_forward(args) -> int:
    cfg = _base_cfg(args)
    metric = _metric_from_args(args, cfg)
    grid = Grid(args.grid, args.grid)
    f = _bc_from_expression(grid, args.bc)
    result = solve_bvp(metric, f)
    out = args.out or "forward.csv"
    emit_plot_data([("u", result.u)], out)
    _write_json(
        {
            "residual_norm": result.residual_norm,
            "iterations": result.iterations,
            "wall_time": result.wall_time,
        },
        os.path.splitext(out)[0] + "_manifest.json",
    )
    print(f"forward: residual {result.residual_norm:.3e} "
          f"in {result.iterations} iterations -> {out}")
    return 0


def cmd_dn(args) -> int:
    cfg = _base_cfg(args)
    metric = _metric_from_args(args, cfg)
    grid = Grid(args.grid, args.grid)
    with open(args.bc_family, encoding="utf-8") as fh:
        exprs = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    family = [_bc_from_expression(grid, text, support=args.gamma) for text in exprs]
    records = dn_batch(metric, family, gamma=args.gamma)
    out = args.out or "dn.csv"
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("record,node_index,x1,x2,f,dnu\n")
        for r_idx, rec in enumerate(records):
            gi, gj = rec.nodes_i, rec.nodes_j
            for k in range(len(gi)):
                fh.write(
                    f"{r_idx},{k},{grid.x1[gi[k], gj[k]]:.16e},"
                    f"{grid.x2[gi[k], gj[k]]:.16e},"
                    f"{rec.f.values[gi[k], gj[k]]:.16e},"
                    f"{rec.neumann[k]:.16e}\n"
                )
    print(f"dn: {len(records)} records on gamma={args.gamma} -> {out}")
    return 0


def cmd_linearize(args) -> int:
    cfg = _base_cfg(args)
    metric = _metric_from_args(args, cfg)
    grid = Grid(args.grid, args.grid)
    f = _bc_from_expression(grid, args.bc)
    fs = [f] * args.order
    eps_ladder = [float(tok) for tok in args.eps.split(",")]

    direct = None
    if args.mode in ("direct", "both"):
        if args.order == 1:
            direct = first_lin_solve(metric, f)
        elif args.order == 2:
            v = first_lin_solve(metric, f)
            direct = second_lin_solve(metric, v, v)
        else:
            raise ConfigError("direct linearizations exist for orders 1 and 2")

    fd_estimates = {}
    if args.mode in ("fd", "both"):
        for eps in eps_ladder:
            fd_estimates[eps] = higher_lin_fd(metric, fs, [eps] * args.order)

    summary = {"order": args.order, "mode": args.mode, "eps": eps_ladder}
    if args.compare and direct is not None and fd_estimates:
        gaps = {
            eps: float(np.max(np.abs((est - direct).values)))
            for eps, est in fd_estimates.items()
        }
        summary["gaps"] = gaps
        summary["eps_slope"] = fit_rate(list(gaps), list(gaps.values()))

    out = args.out or "linearize.csv"
    fields = []
    if direct is not None:
        fields.append(("direct", direct))
    if fd_estimates:
        eps_min = min(fd_estimates)
        fields.append((f"fd_eps_{eps_min:g}", fd_estimates[eps_min]))
    if direct is not None and fd_estimates:
        fields.append(("difference", fd_estimates[min(fd_estimates)] - direct))
    emit_plot_data(fields, out)
    _write_json(summary, os.path.splitext(out)[0] + "_summary.json")
    print(f"linearize: order {args.order}, {len(fields)} fields -> {out}")
    return 0


def cmd_identity_check(args) -> int:
    cfg = _base_cfg(args)
    cfg["study"] = "identity"
    if args.grids:
        cfg["grids"] = args.grids
    config = ExperimentConfig.from_dict(cfg)
    table = run_convergence_study(config)
    return _finish_study(table, args.out or "identity_check.csv")


def cmd_convergence(args) -> int:
    cfg = _base_cfg(args)
    config = ExperimentConfig.from_dict(cfg)
    manifest = new_manifest(config)
    table = run_convergence_study(config, manifest)
    out = args.out or "convergence.csv"
    code = _finish_study(table, out)
    manifest.outputs.append(out)
    manifest.write(os.path.splitext(out)[0] + "_manifest.json")
    return code


def _finish_study(table: ConvergenceTable, out: str) -> int:
    emit_rate_table(table.rows, table.rates, out)
    for quantity, n, value, note in table.rows:
        tail = f"  ({note})" if note else ""
        print(f"{quantity:28s} n={n:4d}  {value:.6e}{tail}")
    for quantity, rate in table.rates.items():
        print(f"{quantity:28s} rate  {rate:.3f}")
    if table.failures:
        for n, msg in table.failures:
            print(f"failure at n={n}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_recover(args) -> int:
    cfg = _base_cfg(args)
    if args.ctilde:
        if os.path.exists(args.ctilde):
            cfg.update(load_config(args.ctilde))
        else:
            cfg["ctilde_c3"] = args.ctilde
    if args.orders:
        cfg["orders"] = args.orders
    if args.pairs:
        cfg["num_pairs"] = args.pairs
    if args.gamma:
        cfg["gamma"] = args.gamma
    config = ExperimentConfig.from_dict(cfg)
    metric = _metric_from_args(args, cfg)
    ctilde = config.ctilde()
    n = config.grids[-1]
    grid = Grid(n, n)
    t0 = time.perf_counter()
    result = recover_taylor_sequence(
        metric,
        ctilde,
        grid,
        orders=config.orders,
        num_pairs=config.num_pairs,
        num_adjoints=config.num_adjoints,
        gamma=config.gamma,
        eps=config.eps[0],
        basis_size=config.basis_size,
        svd_cutoff=config.svd_cutoff,
        tikhonov=config.tikhonov,
        richardson=config.richardson,
    )
    out_dir = args.out or "recover_out"
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    for k, fld in result.coeff_fields.items():
        true_vals = np.broadcast_to(
            np.asarray(ctilde.dn(k, grid.x1, grid.x2, 0.0), dtype=float),
            grid.shape(),
        )
        err = fld - true_vals
        path = os.path.join(out_dir, f"coeff_order{k}.csv")
        emit_plot_data(
            [
                ("true", type(fld)(grid, true_vals.copy())),
                ("recovered", fld),
                ("abs_error", type(fld)(grid, np.abs(err.values))),
            ],
            path,
        )
        outputs.append(path)
        mask = grid.interior_mask
        rel = float(
            np.linalg.norm(err.values[mask])
            / max(np.linalg.norm(true_vals[mask]), 1e-300)
        )
        print(f"order {k}: relative interior error {rel:.3e} -> {path}")
    diag_path = os.path.join(out_dir, "diagnostics.json")
    _write_json(
        {
            "orders": list(config.orders),
            "gamma": config.gamma,
            "lambda_hat": result.lambda_hat,
            "wall_time": time.perf_counter() - t0,
            "diagnostics": result.diagnostics,
        },
        diag_path,
    )
    outputs.append(diag_path)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _base_cfg(args)
    if args.out:
        cfg["out_dir"] = args.out
    config = ExperimentConfig.from_dict(cfg)
    result = run_pipeline(config)
    print(f"pipeline: dn mismatch {result.dn_mismatch:.3e}; "
          f"recovered orders {sorted(result.recovery.coeff_fields)}; "
          f"artifacts {result.artifacts}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mse-lab",
        description="Minimal surface equation laboratory on conformal "
        "product metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output path (file or directory)")
        p.add_argument("--seed", type=int, help="recorded in manifests")
        p.add_argument("--threads", help="thread cap (MSE_LAB_THREADS fallback)")

    p = sub.add_parser("forward", help="solve the nonlinear Dirichlet problem")
    common(p)
    p.add_argument("--metric", help="preset name or config file")
    p.add_argument("--grid", type=int, default=65)
    p.add_argument("--bc", default="0.05*x1*x2", help="boundary expression")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("dn", help="Dirichlet-to-Neumann records for a family")
    common(p)
    p.add_argument("--metric")
    p.add_argument("--grid", type=int, default=65)
    p.add_argument("--gamma", default="all")
    p.add_argument("--bc-family", required=True,
                   help="file with one boundary expression per line")
    p.set_defaults(func=cmd_dn)

    p = sub.add_parser("linearize", help="direct and finite-difference "
                       "linearizations")
    common(p)
    p.add_argument("--metric")
    p.add_argument("--grid", type=int, default=65)
    p.add_argument("--bc", default="0.05*cos(pi*x1)*cos(pi*x2)")
    p.add_argument("--order", type=int, choices=(1, 2, 3, 4), default=1)
    p.add_argument("--eps", default="0.01,0.005,0.0025")
    p.add_argument("--mode", choices=("direct", "fd", "both"), default="both")
    p.add_argument("--compare", action="store_true")
    p.set_defaults(func=cmd_linearize)

    p = sub.add_parser("identity-check", help="integral identity defect study")
    common(p)
    p.add_argument("--grids", help="comma list, e.g. 33,65,129")
    p.set_defaults(func=cmd_identity_check)

    p = sub.add_parser("recover", help="Taylor-coefficient recovery")
    common(p)
    p.add_argument("--metric")
    p.add_argument("--ctilde", help="order-3 coefficient expression or config")
    p.add_argument("--orders", help="comma list starting at 3")
    p.add_argument("--pairs", type=int)
    p.add_argument("--gamma", help="boundary subset for partial data")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("convergence", help="grid-refinement study")
    common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("pipeline", help="end-to-end synthetic recovery run")
    common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args)
    try:
        return args.func(args)
    except (MseLabError, ValueError, OSError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
