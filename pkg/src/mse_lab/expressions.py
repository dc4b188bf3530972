"""Small closed-form expression grammar for metric components.

Allowed: +, -, *, /, ^ (or **), sin, cos, exp, numeric constants, pi, and
the coordinates x1, x2 (plus xn where a height-dependent factor is being
described).  Expressions are parsed into sympy for exact differentiation
and lambdified for vectorized evaluation.
"""

from __future__ import annotations

import re

import numpy as np
import sympy as sp

from .errors import ConfigError

X1, X2, XN = sp.symbols("x1 x2 xn", real=True)

_ALLOWED_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_ALLOWED_NAMES = {"x1": X1, "x2": X2, "xn": XN, "pi": sp.pi, **_ALLOWED_FUNCS}
_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def parse_expression(text: str, allow_xn: bool = False) -> sp.Expr:
    """Parse an expression string in the restricted grammar."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("empty expression")
    for name in _TOKEN_RE.findall(text):
        if name not in _ALLOWED_NAMES:
            raise ConfigError(f"symbol {name!r} not in the expression grammar")
        if name == "xn" and not allow_xn:
            raise ConfigError("xn is not allowed in this expression")
    try:
        expr = sp.sympify(
            text.replace("^", "**"), locals=dict(_ALLOWED_NAMES), rational=False
        )
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc
    return expr


def lambdify_xy(expr: sp.Expr):
    """Vectorized evaluator (x1, x2) -> array, broadcasting constants."""
    f = sp.lambdify((X1, X2), expr, modules="numpy")

    def ev(a, b):
        out = f(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.broadcast_shapes(np.shape(a), np.shape(b))).copy()

    return ev


def lambdify_xyn(expr: sp.Expr):
    """Vectorized evaluator (x1, x2, xn) -> array."""
    f = sp.lambdify((X1, X2, XN), expr, modules="numpy")

    def ev(a, b, c):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        c = np.asarray(c, dtype=float)
        out = f(a, b, c)
        shape = np.broadcast_shapes(a.shape, b.shape, c.shape)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return ev
