"""Experiment orchestration: flat-text configs, convergence studies, the
end-to-end recovery pipeline, and bit-exact CSV emission.

Config files are flat ``key = value`` text; expression-valued entries use
the same restricted grammar as the metric components.  Recognized keys are
documented on :class:`ExperimentConfig`.  All orchestration is
deterministic for a fixed config and seed, and every run writes a manifest
recording the config hash, library versions, wall times and observed
convergence slopes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy
import sympy

from .dn import dn_batch
from .errors import ConfigError, MseLabError
from .expressions import parse_expression
from .forward import (
    divergence_identity_factor,
    residual_F,
    residual_divergence_form,
    residual_mean_curvature,
    solve_bvp,
)
from .grid import BoundaryData, Grid, ScalarField, side_mode_data
from .metrics import ConformalFactor, MetricSpec, ctilde_from_config, metric_from_config
from .recovery import (
    adjoint_family,
    first_lin_records,
    generate_family,
    identity_residual_check,
    recover_surface_gradient,
    recover_taylor_sequence,
)
from .symbolic import evaluate_on_grid, mms_source


# ---------------------------------------------------------------------------
# flat key/value configs


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {ln}: empty key")
        out[key] = value.strip()
    return out


def load_config(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_hash(cfg: dict) -> str:
    """Stable hash of a flat config (order-independent)."""
    canon = json.dumps({k: str(v) for k, v in sorted(cfg.items())})
    return hashlib.sha256(canon.encode()).hexdigest()


def _ints(value, default):
    if value is None:
        return tuple(default)
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(int(tok) for tok in str(value).split(",") if tok.strip())


def _floats(value, default):
    if value is None:
        return tuple(default)
    if isinstance(value, (tuple, list)):
        return tuple(float(v) for v in value)
    return tuple(float(tok) for tok in str(value).split(",") if tok.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated view of a flat config.

    Keys: ``metric`` / ``ghat11..ghat22`` / ``c0`` / ``c3..c6`` /
    ``dimension`` (metric), ``ctilde_c0`` / ``ctilde_c3..`` (perturbation),
    ``grids`` (comma list, strictly increasing), ``study``
    (mms|equivalence|identity), ``u_star`` (manufactured solution for the
    MMS study), ``num_pairs``, ``num_adjoints``, ``orders``, ``gamma``,
    ``eps`` (ladder), ``basis_size``, ``svd_cutoff``, ``tikhonov``,
    ``richardson``, ``out_dir``, ``seed``.
    """

    raw: dict
    grids: tuple
    study: str
    gamma: str
    orders: tuple
    eps: tuple
    num_pairs: int
    num_adjoints: int
    basis_size: int
    seed: int
    out_dir: str | None
    u_star: str
    svd_cutoff: float | None
    tikhonov: float | None
    richardson: bool

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        grids = _ints(cfg.get("grids"), (17, 33, 65))
        if any(b <= a for a, b in zip(grids, grids[1:])):
            raise ConfigError(f"grid sizes must be strictly increasing: {grids}")
        svd_cutoff = cfg.get("svd_cutoff")
        tikhonov = cfg.get("tikhonov")
        return cls(
            raw=dict(cfg),
            grids=grids,
            study=str(cfg.get("study", "mms")),
            gamma=str(cfg.get("gamma", "all")),
            orders=_ints(cfg.get("orders"), (3,)),
            eps=_floats(cfg.get("eps"), (0.35,)),
            num_pairs=int(cfg.get("num_pairs", 24)),
            num_adjoints=int(cfg.get("num_adjoints", 5)),
            basis_size=int(cfg.get("basis_size", 6)),
            seed=int(cfg.get("seed", 0)),
            out_dir=cfg.get("out_dir"),
            u_star=str(cfg.get("u_star", "0.04*sin(pi*x1)*x2*(1-x2)")),
            svd_cutoff=None if svd_cutoff in (None, "") else float(svd_cutoff),
            tikhonov=None if tikhonov in (None, "") else float(tikhonov),
            richardson=str(cfg.get("richardson", "0")).lower()
            in ("1", "true", "yes"),
        )

    def metric(self) -> MetricSpec:
        cfg = dict(self.raw)
        cfg.setdefault("metric", "euclidean")
        return metric_from_config(cfg)

    def ctilde(self) -> ConformalFactor:
        return ctilde_from_config(self.raw)

    def hash(self) -> str:
        return config_hash(self.raw)


@dataclass
class RunManifest:
    """Provenance record attached to every artifact set."""

    config_hash: str
    seed: int
    versions: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    residual_norms: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": self.versions,
            "wall_times": self.wall_times,
            "residual_norms": self.residual_norms,
            "slopes": self.slopes,
            "outputs": self.outputs,
        }

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        return path


def _versions() -> dict:
    from . import __version__

    return {
        "mse_lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
    }


def new_manifest(config: ExperimentConfig) -> RunManifest:
    return RunManifest(
        config_hash=config.hash(), seed=config.seed, versions=_versions()
    )


# ---------------------------------------------------------------------------
# CSV emission (17 significant digits so re-runs are byte-comparable)


def _fmt(v: float) -> str:
    return f"{float(v):.16e}"


def emit_plot_data(fields, path: str) -> str:
    """Write named scalar fields as CSV columns (x1, x2, name...).

    ``fields`` is a sequence of (name, ScalarField) sharing one grid; an
    empty sequence emits the coordinate header only."""
    fields = list(fields)
    names = [name for name, _ in fields]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["x1", "x2"] + names) + "\n")
        if not fields:
            return path
        grid = fields[0][1].grid
        for _, f in fields:
            if f.grid != grid:
                raise ConfigError("plot fields must share one grid")
        cols = [f.values.ravel() for _, f in fields]
        x1, x2 = grid.x1.ravel(), grid.x2.ravel()
        for k in range(x1.size):
            row = [_fmt(x1[k]), _fmt(x2[k])] + [_fmt(c[k]) for c in cols]
            fh.write(",".join(row) + "\n")
    return path


def emit_rate_table(rows, rates, path: str) -> str:
    """CSV of a convergence study: per-grid values then a rate line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("quantity,n,value,note\n")
        for quantity, n, value, note in rows:
            rendered = _fmt(value) if np.isfinite(value) else "nan"
            fh.write(f"{quantity},{n},{rendered},{note}\n")
        for quantity, rate in rates.items():
            rendered = _fmt(rate) if np.isfinite(rate) else "nan"
            fh.write(f"{quantity},rate,{rendered},\n")
    return path


# ---------------------------------------------------------------------------
# convergence studies


def fit_rate(hs, errs) -> float:
    """Observed order from a least-squares line in log-log coordinates.

    Exact zeros are dropped (an identically satisfied identity has no rate);
    fewer than two usable points give nan."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = errs > 0
    if int(keep.sum()) < 2:
        return float("nan")
    slope = np.polyfit(np.log(hs[keep]), np.log(errs[keep]), 1)[0]
    return float(slope)


def _study_mms(config: ExperimentConfig, metric: MetricSpec, n: int) -> dict:
    grid = Grid(n, n)
    u_expr = parse_expression(config.u_star)
    u_star = evaluate_on_grid(u_expr, grid)
    src = mms_source(u_expr, metric, grid)
    f = BoundaryData(grid, np.where(grid.boundary_mask, u_star, 0.0))
    res = solve_bvp(metric, f, source=src)
    return {"mms_error": float(np.max(np.abs(res.u.values - u_star)))}


def _study_equivalence(config: ExperimentConfig, metric: MetricSpec, n: int) -> dict:
    grid = Grid(n, n)
    u_expr = parse_expression(config.u_star)
    u = ScalarField(grid, evaluate_on_grid(u_expr, grid))
    rF = residual_F(u, metric, grid)
    rMC = residual_mean_curvature(u, metric, grid)
    rDV = residual_divergence_form(u, metric, grid)
    factor = divergence_identity_factor(u, metric, grid)
    mask = grid.interior_mask
    return {
        "defect_mean_curvature": float(np.max(np.abs((rMC - rF).values[mask]))),
        "defect_divergence": float(
            np.max(np.abs(rDV.values[mask] - (factor * rF.values)[mask]))
        ),
    }


def _study_identity(config: ExperimentConfig, metric: MetricSpec, n: int) -> dict:
    grid = Grid(n, n)
    ctilde = config.ctilde()
    metric_data = metric.with_factor(ctilde)
    family = generate_family(
        metric_data, grid, min(config.num_pairs, 6), gamma=config.gamma
    )
    v0 = adjoint_family(metric_data, grid, 1, config.gamma)[0]
    pairs = [family.pair_fields(m) for m in range(len(family))]
    defect = identity_residual_check(metric, ctilde, pairs, v0, config.gamma)
    return {"identity_defect": defect}


_STUDIES = {
    "mms": _study_mms,
    "equivalence": _study_equivalence,
    "identity": _study_identity,
}


@dataclass(frozen=True)
class ConvergenceTable:
    rows: list  # (quantity, n, value, note)
    rates: dict  # quantity -> observed order
    failures: list


def run_convergence_study(
    config: ExperimentConfig, manifest: RunManifest | None = None
) -> ConvergenceTable:
    """Evaluate the configured study on every grid and fit log-log rates.

    A failing sub-run annotates the table instead of aborting it; its grid
    is skipped in the regression."""
    if len(config.grids) < 3:
        raise ConfigError("convergence study needs at least 3 grid sizes")
    if config.study not in _STUDIES:
        raise ConfigError(
            f"unknown study {config.study!r} (have {sorted(_STUDIES)})"
        )
    metric = config.metric()
    runner = _STUDIES[config.study]
    per_quantity: dict[str, list] = {}
    rows, failures = [], []
    for n in config.grids:
        t0 = time.perf_counter()
        try:
            values = runner(config, metric, n)
        except MseLabError as exc:
            failures.append((n, str(exc)))
            rows.append((config.study, n, float("nan"), f"failed: {exc}"))
            continue
        dt = time.perf_counter() - t0
        if manifest is not None:
            manifest.wall_times[f"{config.study}_{n}"] = dt
        for quantity, value in values.items():
            rows.append((quantity, n, value, ""))
            per_quantity.setdefault(quantity, []).append((1.0 / (n - 1), value))
    rates = {
        q: fit_rate([h for h, _ in pts], [e for _, e in pts])
        for q, pts in per_quantity.items()
    }
    if manifest is not None:
        manifest.slopes.update(rates)
    return ConvergenceTable(rows=rows, rates=rates, failures=failures)


# ---------------------------------------------------------------------------
# end-to-end pipeline


@dataclass(frozen=True)
class PipelineResult:
    recovery: object
    surface_gradient: object
    dn_mismatch: float
    manifest: RunManifest
    artifacts: list


def _stage(label: str):
    """Decorator-free stage wrapper: re-raise with the stage label."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, MseLabError):
                raise type(exc)(f"stage {label}: {exc}") from exc
            return False

    return _Ctx()


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """Chain synthetic DN data, the first-order drift fit and the
    Taylor-coefficient recovery for one config.

    Deterministic for a fixed config and seed; artifacts (recovered fields
    as CSV plus a JSON manifest) land in ``out_dir`` when set."""
    manifest = new_manifest(config)
    metric = config.metric()
    ctilde = config.ctilde()
    metric_data = metric.with_factor(ctilde)
    n = config.grids[-1]
    grid = Grid(n, n)
    artifacts = []

    with _stage("dn"):
        t0 = time.perf_counter()
        probe = [
            side_mode_data(grid, side, k + 1, 0.05)
            for side in ("left", "bottom", "right", "top")
            for k in range(2)
        ]
        rec_g = dn_batch(metric, probe)
        rec_data = dn_batch(metric_data, probe)
        mismatch = max(
            float(np.max(np.abs(a.neumann - b.neumann)))
            for a, b in zip(rec_g, rec_data)
        )
        manifest.wall_times["dn"] = time.perf_counter() - t0
        manifest.residual_norms["dn_mismatch"] = mismatch

    with _stage("linearize"):
        t0 = time.perf_counter()
        dn1_g = first_lin_records(metric, probe)
        dn1_data = first_lin_records(metric_data, probe)
        sg = recover_surface_gradient(metric, dn1_g, dn1_data)
        manifest.wall_times["linearize"] = time.perf_counter() - t0
        manifest.residual_norms["surface_gradient"] = sg.residual_norm

    with _stage("recover"):
        t0 = time.perf_counter()
        recovery = recover_taylor_sequence(
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
        manifest.wall_times["recover"] = time.perf_counter() - t0
        for k, diag in recovery.diagnostics.items():
            manifest.residual_norms[f"order{k}_residual"] = diag["residual_norm"]

    if config.out_dir:
        with _stage("emit"):
            os.makedirs(config.out_dir, exist_ok=True)
            fields = [("surface_factor", sg.surface_factor)] + [
                (f"coeff_order{k}", fld) for k, fld in recovery.coeff_fields.items()
            ]
            csv_path = os.path.join(config.out_dir, "pipeline_fields.csv")
            emit_plot_data(fields, csv_path)
            artifacts.append(csv_path)
            manifest.outputs.append(csv_path)
            man_path = os.path.join(config.out_dir, "manifest.json")
            manifest.write(man_path)
            artifacts.append(man_path)

    return PipelineResult(
        recovery=recovery,
        surface_gradient=sg,
        dn_mismatch=mismatch,
        manifest=manifest,
        artifacts=artifacts,
    )
