"""Uniform grids, discrete fields, and the forward-difference calculus.

Two grid types:

* TorusGrid: the unit d-torus (d = 2 or 3) split into n^d cells of size
  h = 1/n, cell centers at (i + 1/2) h.  Gradients are colocated forward
  differences with periodic wrap; divergence is the (negative-adjoint)
  backward difference.

* BoxGrid: a square box [0, L]^2 with n cells per side, h = L/n, and
  fields extended by zero outside.  The gradient of a cell field lives on
  the (n+1)^2 sites of the zero-padded array, site j pairing cells j-1
  and j per axis (site centers (j - 1/2) h), so indicator boundaries along
  all four walls are charged.

With the cell measure h^d on both cell and site arrays, gradient and
divergence are exact negative adjoints:

    <D v, z>_h = - <v, div z>_h        (to rounding)

which the solver relies on for its duality certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise GridError(f"torus dimension must be 2 or 3, got {self.d}")
        if self.n < 4:
            raise GridError(f"need at least 4 cells per axis, got n={self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def cell_centers(self) -> np.ndarray:
        """Array of shape (n, ..., n, d) with physical cell centers."""
        ax = (np.arange(self.n) + 0.5) * self.h
        grids = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack(grids, axis=-1)


@dataclass(frozen=True)
class BoxGrid:
    n: int
    length: float
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise GridError("box grid is 2-d only")
        if self.n < 2:
            raise GridError(f"need at least 2 cells per axis, got n={self.n}")
        if not (np.isfinite(self.length) and self.length > 0):
            raise GridError(f"box side length must be positive, got {self.length}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def cell_centers(self) -> np.ndarray:
        ax = (np.arange(self.n) + 0.5) * self.h
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def site_centers(self) -> np.ndarray:
        """Centers of the (n+1)^2 gradient sites, (j - 1/2) h."""
        ax = (np.arange(self.n + 1) - 0.5) * self.h
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)


def _check_values(values, shape, what):
    values = np.asarray(values, dtype=float)
    if values.shape != shape:
        raise GridError(f"{what} has shape {values.shape}, expected {shape}")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{what} contains non-finite entries")
    return values


@dataclass
class ScalarField:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.values, self.grid.shape, "scalar field")

    @staticmethod
    def zeros(grid):
        return ScalarField(grid, np.zeros(grid.shape))

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass
class VectorField:
    """Components-first vector field; see gradient() for the site layout."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        g = self.grid
        if isinstance(g, TorusGrid):
            shape = (g.d,) + g.shape
        else:
            shape = (2, g.n + 1, g.n + 1)
        self.values = _check_values(self.values, shape, "vector field")

    @staticmethod
    def zeros(grid):
        if isinstance(grid, TorusGrid):
            return VectorField(grid, np.zeros((grid.d,) + grid.shape))
        return VectorField(grid, np.zeros((2, grid.n + 1, grid.n + 1)))


@dataclass
class BitMask:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype != bool:
            raise GridError("mask values must be boolean")
        if values.shape != self.grid.shape:
            raise GridError(f"mask has shape {values.shape}, expected {self.grid.shape}")
        self.values = values

    def volume(self) -> float:
        return float(np.count_nonzero(self.values)) * self.grid.cell_volume


# ---------------------------------------------------------------------------
# difference operators
# ---------------------------------------------------------------------------


def gradient(v: ScalarField) -> VectorField:
    """Forward-difference gradient (components-first array)."""
    g = v.grid
    u = v.values
    h = g.h
    if isinstance(g, TorusGrid):
        comps = [(np.roll(u, -1, axis=k) - u) / h for k in range(g.d)]
        return VectorField(g, np.stack(comps, axis=0))
    n = g.n
    up = np.zeros((n + 2, n + 2))
    up[1:-1, 1:-1] = u
    g0 = (up[1:, :-1] - up[:-1, :-1]) / h
    g1 = (up[:-1, 1:] - up[:-1, :-1]) / h
    return VectorField(g, np.stack([g0, g1], axis=0))


def divergence(z: VectorField) -> ScalarField:
    """Negative adjoint of gradient() under the h^d-weighted inner product."""
    g = z.grid
    Z = z.values
    h = g.h
    if isinstance(g, TorusGrid):
        out = np.zeros(g.shape)
        for k in range(g.d):
            out += (Z[k] - np.roll(Z[k], 1, axis=k)) / h
        return ScalarField(g, out)
    d0 = (Z[0][1:, 1:] - Z[0][:-1, 1:]) / h
    d1 = (Z[1][1:, 1:] - Z[1][1:, :-1]) / h
    return ScalarField(g, d0 + d1)


def inner(a: np.ndarray, b: np.ndarray, grid) -> float:
    """h^d-weighted inner product of raw arrays on the same grid."""
    return float(np.sum(a * b)) * grid.cell_volume


def extract_levelset(u: ScalarField, s: float) -> BitMask:
    """Strict superlevel set {u > s} as a cell mask."""
    return BitMask(u.grid, u.values > s)


# ---------------------------------------------------------------------------
# field serialization: CSV of values + JSON sidecar with grid metadata
# ---------------------------------------------------------------------------


def _grid_meta(grid) -> dict:
    if isinstance(grid, TorusGrid):
        return {"type": "torus", "d": grid.d, "n": grid.n}
    return {"type": "box", "d": 2, "n": grid.n, "length": grid.length}


def grid_from_meta(meta: dict):
    if meta["type"] == "torus":
        return TorusGrid(d=int(meta["d"]), n=int(meta["n"]))
    if meta["type"] == "box":
        return BoxGrid(n=int(meta["n"]), length=float(meta["length"]))
    raise GridError(f"unknown grid type {meta['type']!r}")


def save_field_csv(path, field, name="v"):
    """Write field values as CSV, one value per line (row-major; vector
    fields list component 0 fully, then component 1, ...).  A JSON sidecar
    `<path>.json` records the grid so the round-trip is exact."""
    import json

    vals = field.values
    flat = vals.astype(float).reshape(-1)
    with open(path, "w") as f:
        f.write(name + "\n")
        for x in flat:
            f.write(f"{x:.17g}\n")
    meta = {"grid": _grid_meta(field.grid), "name": name,
            "kind": "vector" if isinstance(field, VectorField) else "scalar"}
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")


def load_field_csv(path):
    import json

    with open(str(path) + ".json") as f:
        meta = json.load(f)
    grid = grid_from_meta(meta["grid"])
    vals = np.loadtxt(path, skiprows=1, dtype=float)
    if meta["kind"] == "vector":
        zf = VectorField.zeros(grid)
        return VectorField(grid, vals.reshape(zf.values.shape))
    return ScalarField(grid, vals.reshape(grid.shape))


def save_mask_csv(path, mask: BitMask, window_origin=None):
    """Write a cell mask as CSV rows `i,j[,k]` of set cells (lex order)."""
    import json

    idx = np.argwhere(mask.values)
    header = ",".join("ijk"[: mask.values.ndim])
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in idx:
            f.write(",".join(str(int(c)) for c in row) + "\n")
    meta = {"grid": _grid_meta(mask.grid), "count": int(idx.shape[0])}
    if window_origin is not None:
        meta["window_origin"] = list(window_origin)
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")
