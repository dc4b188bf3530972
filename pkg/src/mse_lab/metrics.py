"""Metric family g = c(x) (ghat ⊕ e): transversal metric and conformal factor.

Everything is built from closed-form sympy expressions so that spatial and
height derivatives are available analytically; a finite-difference fallback
(step 1e-5, independent of the grid spacing) covers evaluator-only input.
"""

from __future__ import annotations

import math

import numpy as np
import sympy as sp

from .errors import ConfigError, DomainEscapeError, MetricInvalidError
from .expressions import X1, X2, XN, lambdify_xy, lambdify_xyn, parse_expression
from .grid import Grid

_FD_STEP = 1e-5
DEFAULT_KMAX = 6
_FLATNESS_TOL = 1e-10


class ConformalFactor:
    """Smooth positive factor c(x', xn) with analytic derivatives.

    The standing hypotheses require the first two height derivatives to
    vanish on the surface xn = 0, which is automatic when built through
    :meth:`from_parts` (c = c0(x') + sum_{k>=3} xn^k c_k(x')/k!).
    """

    def __init__(self, expr: sp.Expr, kmax: int = DEFAULT_KMAX):
        self.expr = sp.sympify(expr)
        self.kmax = kmax
        self._eval = lambdify_xyn(self.expr)
        self._dx = [lambdify_xyn(sp.diff(self.expr, s)) for s in (X1, X2)]
        self._dxdx = {
            (i, j): lambdify_xyn(sp.diff(self.expr, si, sj))
            for i, si in enumerate((X1, X2))
            for j, sj in enumerate((X1, X2))
        }
        self._dn = [self._eval]
        for k in range(1, kmax + 1):
            self._dn.append(lambdify_xyn(sp.diff(self.expr, XN, k)))
        self._dx_dn = {
            (i, k): lambdify_xyn(sp.diff(self.expr, s, XN, k))
            for i, s in enumerate((X1, X2))
            for k in range(1, kmax + 1)
        }

    @classmethod
    def from_parts(
        cls,
        c0: str | sp.Expr = "1",
        coeffs: dict[int, str | sp.Expr] | None = None,
        kmax: int = DEFAULT_KMAX,
    ) -> "ConformalFactor":
        """Assemble c = c0(x') + sum_k xn^k c_k(x')/k! with k >= 3."""
        expr = _parse_xy(c0)
        for k, ck in (coeffs or {}).items():
            k = int(k)
            if k < 3:
                raise ConfigError(
                    "height coefficients start at order 3 (flatness at xn=0)"
                )
            expr = expr + XN**k * _parse_xy(ck) / math.factorial(k)
        return cls(expr, kmax)

    @classmethod
    def constant(cls, value: float = 1.0, kmax: int = DEFAULT_KMAX):
        return cls(sp.Float(value), kmax)

    def __call__(self, x1, x2, xn):
        return self._eval(x1, x2, xn)

    def dx(self, i: int, x1, x2, xn):
        """Spatial derivative d c / d x_{i+1} at height xn."""
        return self._dx[i](x1, x2, xn)

    def dxdx(self, i: int, j: int, x1, x2, xn):
        return self._dxdx[(i, j)](x1, x2, xn)

    def dn(self, k: int, x1, x2, xn):
        """k-th height derivative, k = 0..kmax."""
        if not 0 <= k <= self.kmax:
            raise ConfigError(f"height-derivative order {k} outside 0..{self.kmax}")
        return self._dn[k](x1, x2, xn)

    def dx_dn(self, i: int, k: int, x1, x2, xn):
        return self._dx_dn[(i, k)](x1, x2, xn)

    def scaled(self, mu: float) -> "ConformalFactor":
        return ConformalFactor(mu * self.expr, self.kmax)

    def times(self, other: "ConformalFactor") -> "ConformalFactor":
        return ConformalFactor(self.expr * other.expr, min(self.kmax, other.kmax))

    def check_flat_at_zero(self, grid: Grid):
        for k in (1, 2):
            d = self.dn(k, grid.x1, grid.x2, 0.0)
            if np.max(np.abs(d)) > _FLATNESS_TOL:
                raise MetricInvalidError(
                    f"order-{k} height derivative of the conformal factor does "
                    "not vanish at xn=0"
                )


def _parse_xy(v) -> sp.Expr:
    if isinstance(v, sp.Expr):
        return v
    if isinstance(v, (int, float)):
        return sp.sympify(v)
    return parse_expression(v, allow_xn=False)


class MetricSpec:
    """Transversal metric ghat(x') plus conformal factor c(x', xn).

    ``ghat`` components are sympy expressions of (x1, x2); their first
    spatial derivatives are taken analytically.  ``n`` is the symbolic
    ambient dimension entering the coefficient formulas (grids stay 2-D).
    """

    def __init__(
        self,
        g11: str | sp.Expr = "1",
        g12: str | sp.Expr = "0",
        g22: str | sp.Expr = "1",
        c: ConformalFactor | None = None,
        n: int = 3,
        name: str = "custom",
    ):
        self.exprs = (
            (_parse_xy(g11), _parse_xy(g12)),
            (_parse_xy(g12), _parse_xy(g22)),
        )
        self.c = c if c is not None else ConformalFactor.constant(1.0)
        self.n = int(n)
        self.name = name
        self._comp = [[lambdify_xy(e) for e in row] for row in self.exprs]
        self._dcomp = [
            [
                [lambdify_xy(sp.diff(e, s)) for s in (X1, X2)]
                for e in row
            ]
            for row in self.exprs
        ]

    # -- transversal metric -------------------------------------------------

    def ghat(self, x1, x2) -> np.ndarray:
        """Components, shape (2, 2) + broadcast shape."""
        return np.stack(
            [np.stack([self._comp[i][j](x1, x2) for j in range(2)]) for i in range(2)]
        )

    def ghat_deriv(self, x1, x2) -> np.ndarray:
        """d ghat_{ij} / d x_r, shape (2, 2, 2) + broadcast shape
        (last metric index is r)."""
        return np.stack(
            [
                np.stack(
                    [
                        np.stack([self._dcomp[i][j][r](x1, x2) for r in range(2)])
                        for j in range(2)
                    ]
                )
                for i in range(2)
            ]
        )

    def ghat_inv_det(self, x1, x2):
        """(inverse components (2,2,...), determinant)."""
        g = self.ghat(x1, x2)
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        inv = np.empty_like(g)
        inv[0, 0] = g[1, 1] / det
        inv[1, 1] = g[0, 0] / det
        inv[0, 1] = -g[0, 1] / det
        inv[1, 0] = -g[1, 0] / det
        return inv, det

    # -- checks -------------------------------------------------------------

    def validate(self, grid: Grid, heights=(-0.1, 0.0, 0.1)):
        g = self.ghat(grid.x1, grid.x2)
        det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
        tr = g[0, 0] + g[1, 1]
        if np.any(det <= 0) or np.any(tr <= 0):
            raise MetricInvalidError(
                f"transversal metric {self.name!r} is not SPD on the grid"
            )
        for xn in heights:
            if np.any(self.c(grid.x1, grid.x2, xn) <= 0):
                raise MetricInvalidError(
                    f"conformal factor non-positive at height {xn}"
                )
        self.c.check_flat_at_zero(grid)

    def c_at(self, x1, x2, xn) -> np.ndarray:
        vals = self.c(x1, x2, xn)
        if np.any(vals <= 0):
            raise DomainEscapeError(
                "conformal factor non-positive at a sampled height"
            )
        return vals

    # -- derived metrics ----------------------------------------------------

    def with_factor(self, ctilde: ConformalFactor, name: str | None = None):
        """Metric ctilde * g (same transversal part, composed factor)."""
        m = MetricSpec.__new__(MetricSpec)
        m.exprs = self.exprs
        m.c = self.c.times(ctilde)
        m.n = self.n
        m.name = name or f"{self.name}*ctilde"
        m._comp = self._comp
        m._dcomp = self._dcomp
        return m

    def scaled_conformal(self, mu: float):
        """Gauge transform c -> mu * c."""
        m = MetricSpec.__new__(MetricSpec)
        m.exprs = self.exprs
        m.c = self.c.scaled(mu)
        m.n = self.n
        m.name = f"{self.name}(x{mu})"
        m._comp = self._comp
        m._dcomp = self._dcomp
        return m


# ---------------------------------------------------------------------------
# preset catalog (the simplicity hypothesis on (Omega, ghat) is not checked
# algorithmically; these presets are mild perturbations of flat space)

_PRESETS = {
    "euclidean": dict(g11="1", g12="0", g22="1"),
    "conformal_exp": dict(g11="exp(0.8*x1)", g12="0", g22="exp(0.8*x1)"),
    "diag_poly": dict(g11="1", g12="0", g22="1 + x1^2"),
}

_PRESET_C = {
    "euclidean": dict(c0="1", coeffs={}),
    "conformal_exp": dict(
        c0="1 + 0.2*x1", coeffs={3: "sin(pi*x1)*sin(pi*x2)", 4: "x1*(1-x1)"}
    ),
    "diag_poly": dict(
        c0="1 + 0.1*x2 + 0.1*x1", coeffs={3: "cos(pi*x1)", 4: "x2*(1-x2)"}
    ),
}

PRESET_NAMES = tuple(_PRESETS)


def metric_preset(
    name: str,
    c0: str | None = None,
    coeffs: dict[int, str] | None = None,
    n: int = 3,
) -> MetricSpec:
    """Named preset, optionally overriding the conformal factor."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown metric preset {name!r} (have {PRESET_NAMES})")
    cdef = _PRESET_C[name]
    factor = ConformalFactor.from_parts(
        c0 if c0 is not None else cdef["c0"],
        coeffs if coeffs is not None else cdef["coeffs"],
    )
    return MetricSpec(**_PRESETS[name], c=factor, n=n, name=name)


def metric_from_config(cfg: dict) -> MetricSpec:
    """Build a metric from flat config keys.

    Recognized keys: ``metric`` (preset name) or ``ghat11/ghat12/ghat22``,
    ``c0``, ``c3``..``c6`` (coefficient expressions), ``dimension``.
    """
    coeffs = {k: cfg[f"c{k}"] for k in range(3, DEFAULT_KMAX + 1) if f"c{k}" in cfg}
    n = int(cfg.get("dimension", 3))
    if "metric" in cfg and cfg["metric"] in _PRESETS:
        return metric_preset(
            cfg["metric"], c0=cfg.get("c0"), coeffs=coeffs or None, n=n
        )
    if any(k in cfg for k in ("ghat11", "ghat12", "ghat22")):
        factor = ConformalFactor.from_parts(cfg.get("c0", "1"), coeffs)
        return MetricSpec(
            cfg.get("ghat11", "1"),
            cfg.get("ghat12", "0"),
            cfg.get("ghat22", "1"),
            c=factor,
            n=n,
            name="config",
        )
    raise ConfigError("config defines no metric (need 'metric' or ghat components)")


def ctilde_from_config(cfg: dict, prefix: str = "ctilde_") -> ConformalFactor:
    """Conformal perturbation from config keys ``ctilde_c0``, ``ctilde_c3``.."""
    coeffs = {
        k: cfg[f"{prefix}c{k}"]
        for k in range(3, DEFAULT_KMAX + 1)
        if f"{prefix}c{k}" in cfg
    }
    return ConformalFactor.from_parts(cfg.get(f"{prefix}c0", "1"), coeffs)
