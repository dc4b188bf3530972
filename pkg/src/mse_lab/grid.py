"""Structured grid over the unit square, field containers and boundary data.

Fields are stored as ``(nx, ny)`` arrays with ``values[i, j]`` located at
``(x1, x2) = (i * h, j * h)``.  The four sides are named ``left`` (x1 = 0),
``right`` (x1 = 1), ``bottom`` (x2 = 0) and ``top`` (x2 = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

SIDES = ("left", "bottom", "right", "top")

#: outward Euclidean unit normal per side, components (nu_1, nu_2)
SIDE_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid on [0, 1]^2 with square cells."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ConfigError("grid needs at least 5 nodes per direction")
        if self.nx != self.ny:
            raise ConfigError(
                "square cells require nx == ny (h = 1/(nx-1) = 1/(ny-1))"
            )

    @property
    def h(self) -> float:
        return 1.0 / (self.nx - 1)

    @cached_property
    def x1(self) -> np.ndarray:
        """Node x1-coordinates, shape (nx, ny)."""
        return np.broadcast_to(
            np.linspace(0.0, 1.0, self.nx)[:, None], (self.nx, self.ny)
        ).copy()

    @cached_property
    def x2(self) -> np.ndarray:
        """Node x2-coordinates, shape (nx, ny)."""
        return np.broadcast_to(
            np.linspace(0.0, 1.0, self.ny)[None, :], (self.nx, self.ny)
        ).copy()

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros((self.nx, self.ny), dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask

    @cached_property
    def corner_mask(self) -> np.ndarray:
        m = np.zeros((self.nx, self.ny), dtype=bool)
        for i in (0, self.nx - 1):
            for j in (0, self.ny - 1):
                m[i, j] = True
        return m

    def side_indices(self, side: str, include_corners: bool = False):
        """Index arrays (I, J) of the nodes on one side, ordered by the
        tangential coordinate."""
        n = self.nx
        sl = slice(None) if include_corners else slice(1, n - 1)
        rng = np.arange(n)[sl]
        if side == "left":
            return np.zeros_like(rng), rng
        if side == "right":
            return np.full_like(rng, n - 1), rng
        if side == "bottom":
            return rng, np.zeros_like(rng)
        if side == "top":
            return rng, np.full_like(rng, n - 1)
        raise ConfigError(f"unknown side {side!r}")

    def side_tangent_coord(self, side: str, include_corners: bool = False):
        """Arc-length coordinate along a side (x2 on left/right, x1 on
        bottom/top)."""
        i, j = self.side_indices(side, include_corners)
        if side in ("left", "right"):
            return j * self.h
        return i * self.h

    def shape(self):
        return (self.nx, self.ny)


def make_grid(n: int) -> Grid:
    return Grid(n, n)


# ---------------------------------------------------------------------------
# named boundary subsets


def gamma_sides(gamma: str) -> list[str]:
    """Sides touched by a gamma spec (used for support bookkeeping)."""
    if gamma == "all":
        return list(SIDES)
    if gamma in SIDES:
        return [gamma]
    if gamma.startswith("arc:"):
        return [_parse_arc(gamma)[2]]
    raise ConfigError(f"unknown boundary subset {gamma!r}")


def _parse_arc(gamma: str):
    try:
        _, i0, i1, side = gamma.split(":")
        i0, i1 = int(i0), int(i1)
    except ValueError as exc:
        raise ConfigError(f"bad arc spec {gamma!r}, want arc:i0:i1:side") from exc
    if side not in SIDES:
        raise ConfigError(f"bad side in arc spec {gamma!r}")
    if i0 >= i1:
        raise ConfigError(f"empty arc {gamma!r}")
    return i0, i1, side


def gamma_mask(grid: Grid, gamma: str) -> np.ndarray:
    """Boolean mask of the boundary nodes belonging to gamma.

    Corner nodes are never part of a named subset.
    """
    m = np.zeros(grid.shape(), dtype=bool)
    if gamma == "all":
        m |= grid.boundary_mask & ~grid.corner_mask
        return m
    if gamma in SIDES:
        i, j = grid.side_indices(gamma, include_corners=False)
        m[i, j] = True
        return m
    if gamma.startswith("arc:"):
        i0, i1, side = _parse_arc(gamma)
        i, j = grid.side_indices(side, include_corners=True)
        sel = (np.arange(len(i)) >= i0) & (np.arange(len(i)) <= i1)
        m[i[sel], j[sel]] = True
        m &= ~grid.corner_mask
        return m
    raise ConfigError(f"unknown boundary subset {gamma!r}")


def gamma_nodes(grid: Grid, gamma: str):
    """Deterministically ordered (I, J) index arrays of non-corner gamma
    nodes: sides in the order left, bottom, right, top, tangentially
    ascending within a side."""
    mask = gamma_mask(grid, gamma)
    Is, Js = [], []
    for side in SIDES:
        i, j = grid.side_indices(side, include_corners=False)
        keep = mask[i, j]
        Is.append(i[keep])
        Js.append(j[keep])
    return np.concatenate(Is), np.concatenate(Js)


# ---------------------------------------------------------------------------
# field containers


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class ScalarField:
    """Nodal values of a function of x' on the full grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape():
            raise ValueError(f"field shape {v.shape} != grid {self.grid.shape()}")
        _check_finite(v, "scalar field")
        object.__setattr__(self, "values", v)

    def interior_max(self) -> float:
        return float(np.max(np.abs(self.values[self.grid.interior_mask])))

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, a):
        return ScalarField(self.grid, self.values * _vals(a))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


@dataclass(frozen=True)
class VectorField:
    """Contravariant components (w.r.t. the coordinates x') of a vector
    field on the grid."""

    grid: Grid
    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != self.grid.shape():
                raise ValueError("vector component shape mismatch")
            _check_finite(v, f"vector component {name}")
            object.__setattr__(self, name, v)

    def component(self, i: int) -> np.ndarray:
        return (self.v1, self.v2)[i]


def scalar_field(grid: Grid, fn_or_values) -> ScalarField:
    """Build a ScalarField from a callable (x1, x2) -> array or an array."""
    if callable(fn_or_values):
        vals = np.asarray(fn_or_values(grid.x1, grid.x2), dtype=float)
        vals = np.broadcast_to(vals, grid.shape()).copy()
        return ScalarField(grid, vals)
    return ScalarField(grid, np.asarray(fn_or_values, dtype=float))


# ---------------------------------------------------------------------------
# boundary data

#: default smallness cap for the sup-norm proxy of the boundary-data norm
DELTA_CAP = 0.1


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet values on boundary nodes with optional support restriction.

    ``values`` is a full-grid array that must vanish on interior nodes and
    outside the declared support.
    """

    grid: Grid
    values: np.ndarray
    support: str = "all"
    delta_cap: float = DELTA_CAP

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape():
            raise ValueError("boundary data shape mismatch")
        _check_finite(v, "boundary data")
        if np.any(v[self.grid.interior_mask] != 0.0):
            raise ValueError("boundary data must vanish at interior nodes")
        if self.support != "all":
            allowed = gamma_mask(self.grid, self.support)
            outside = self.grid.boundary_mask & ~allowed
            if np.any(v[outside] != 0.0):
                raise ValueError(
                    f"boundary data leaks outside support {self.support!r}"
                )
        if self.smallness >= self.delta_cap:
            raise ValueError(
                f"boundary data sup-norm {self.smallness:.3g} exceeds the "
                f"smallness cap {self.delta_cap:.3g}"
            )
        object.__setattr__(self, "values", v)

    @property
    def smallness(self) -> float:
        return float(np.max(np.abs(np.asarray(self.values, dtype=float))))

    def scaled(self, a: float) -> "BoundaryData":
        return BoundaryData(self.grid, a * self.values, self.support, self.delta_cap)


def boundary_data_from_callable(
    grid: Grid, fn, support: str = "all", delta_cap: float = DELTA_CAP
) -> BoundaryData:
    """Sample ``fn(x1, x2)`` on the boundary nodes of ``support``."""
    vals = np.zeros(grid.shape())
    if support == "all":
        mask = grid.boundary_mask
    else:
        mask = gamma_mask(grid, support)
    sampled = np.broadcast_to(
        np.asarray(fn(grid.x1, grid.x2), dtype=float), grid.shape()
    )
    vals[mask] = sampled[mask]
    return BoundaryData(grid, vals, support, delta_cap)


def side_mode_data(
    grid: Grid,
    side: str,
    mode: int,
    amplitude: float,
    support: str | None = None,
    buffer: int = 0,
    delta_cap: float = DELTA_CAP,
) -> BoundaryData:
    """Sine trace ``amplitude * sin(mode * pi * t)`` on one side, zero
    elsewhere.  ``buffer`` extra nodes next to the corners are zeroed so the
    support keeps a safety margin from the ends of the arc."""
    vals = np.zeros(grid.shape())
    i, j = grid.side_indices(side, include_corners=False)
    t = grid.side_tangent_coord(side, include_corners=False)
    trace = amplitude * np.sin(mode * np.pi * t)
    if buffer > 0:
        trace = trace.copy()
        trace[:buffer] = 0.0
        trace[len(trace) - buffer:] = 0.0
    vals[i, j] = trace
    return BoundaryData(grid, vals, support or side, delta_cap)


def constant_boundary_data(
    grid: Grid, value: float, delta_cap: float = DELTA_CAP
) -> BoundaryData:
    vals = np.zeros(grid.shape())
    vals[grid.boundary_mask] = value
    return BoundaryData(grid, vals, "all", delta_cap)
