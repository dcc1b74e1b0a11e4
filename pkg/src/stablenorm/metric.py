"""Periodic anisotropic surface integrands F(x, p) = a(x) * N(p).

Conventions
-----------
All media in this package are of product form: a 1-periodic coefficient
a(x) >= a_min > 0 times a fixed base norm N on R^d.  The polar (dual) norm
is

    F*(x, z) = sup { z . p : F(x, p) <= 1 } = N*(z) / a(x),

so the local dual constraint F*(x, z) <= 1 is N*(z) <= a(x).  Every medium
carries an ellipticity constant c0 in (0, 1] with

    c0 |p| <= F(x, p) <= |p| / c0   for all x, p,

computed from exact coefficient bounds and base-norm equivalence constants.

Base norms
----------
euclidean   N(p) = |p|_2,               N*(z) = |z|_2
ell1        N(p) = |p|_1,               N*(z) = |z|_inf
ellipse     N(p) = sqrt(sum (p_k/s_k)^2), semi-axes s_k > 0 of {N <= 1};
            N*(z) = sqrt(sum (s_k z_k)^2)

project_dual performs the Euclidean projection onto {N*(w) <= a(x)}:
radial clip (euclidean), componentwise clamp (ell1), or a Newton solve on
the Lagrange multiplier (ellipse).

Array layout: point/vector arguments use a trailing coordinate axis
(shape (..., d)).  Solver hot loops use the components-first layout
(shape (d, ...)) through the `base` attribute directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

_VALID_KINDS = ("homogeneous", "laminate", "checkerboard-smoothed", "smooth-trig", "sampled")
_VALID_BASE_NORMS = ("euclidean", "ell1", "ellipse")

_PROJ_TOL = 1e-12  # dual-ball membership slack after projection
_NEWTON_MAX_ITERS = 50


class MediumError(ValueError):
    """Invalid medium specification."""


class CapabilityError(RuntimeError):
    """Operation not supported for this base norm (e.g. grad_p of ell1)."""


# ---------------------------------------------------------------------------
# base norms, components-first layout
# ---------------------------------------------------------------------------


class _Euclidean:
    name = "euclidean"
    differentiable = True

    def __init__(self, d):
        self.d = d

    def norm(self, P):
        return np.sqrt(np.sum(np.square(P), axis=0))

    def polar(self, Z):
        return np.sqrt(np.sum(np.square(Z), axis=0))

    def grad(self, P):
        r = self.norm(P)
        if np.any(r == 0.0):
            raise ValueError("grad undefined at p = 0")
        return P / r

    def project_polar(self, Z, radius):
        r = self.polar(Z)
        scale = np.where(r > radius, radius / np.where(r > 0.0, r, 1.0), 1.0)
        return Z * scale

    def bounds(self):
        return 1.0, 1.0


class _Ell1:
    name = "ell1"
    differentiable = False

    def __init__(self, d):
        self.d = d

    def norm(self, P):
        return np.sum(np.abs(P), axis=0)

    def polar(self, Z):
        return np.max(np.abs(Z), axis=0)

    def grad(self, P):
        raise CapabilityError("ell1 base norm is not differentiable; grad_p unavailable")

    def project_polar(self, Z, radius):
        # dual ball is the box |w_k| <= a
        return np.clip(Z, -radius, radius)

    def bounds(self):
        return 1.0, float(np.sqrt(self.d))


class _Ellipse:
    name = "ellipse"
    differentiable = True

    def __init__(self, d, axes):
        axes = np.asarray(axes, dtype=float)
        if axes.shape != (d,) or np.any(axes <= 0.0) or not np.all(np.isfinite(axes)):
            raise MediumError(f"ellipse axes must be {d} positive finite numbers, got {axes!r}")
        self.d = d
        self.axes = axes

    def _ax(self, ndim):
        return self.axes.reshape((self.d,) + (1,) * (ndim - 1))

    def norm(self, P):
        s = self._ax(P.ndim)
        return np.sqrt(np.sum(np.square(P / s), axis=0))

    def polar(self, Z):
        s = self._ax(Z.ndim)
        return np.sqrt(np.sum(np.square(Z * s), axis=0))

    def grad(self, P):
        r = self.norm(P)
        if np.any(r == 0.0):
            raise ValueError("grad undefined at p = 0")
        s = self._ax(P.ndim)
        return (P / s**2) / r

    def project_polar(self, Z, radius):
        # project onto the ellipse {sum (w_k/c_k)^2 <= 1}, c_k = a/s_k, cellwise.
        # Outside points satisfy w_k = z_k c_k^2/(c_k^2 + lam) with lam > 0 the
        # root of g(lam) = sum c_k^2 z_k^2/(c_k^2+lam)^2 - 1.  g is decreasing
        # and convex on lam >= 0, so Newton from 0 increases monotonically to
        # the root.
        pol = self.polar(Z)
        radius = np.broadcast_to(radius, pol.shape)
        outside = pol > radius
        if not np.any(outside):
            return Z
        s = self.axes.reshape((self.d,) + (1,) * (pol.ndim))
        zo = np.stack([Z[k][outside] for k in range(self.d)], axis=0)
        c = radius[outside][None, :] / self.axes[:, None]
        c2 = c * c
        lam = np.zeros(zo.shape[1])
        c2z2 = c2 * zo * zo
        for _ in range(_NEWTON_MAX_ITERS):
            denom = c2 + lam[None, :]
            g = np.sum(c2z2 / denom**2, axis=0) - 1.0
            if np.max(g) <= _PROJ_TOL:
                break
            dg = -2.0 * np.sum(c2z2 / denom**3, axis=0)
            lam = lam - g / dg
        w = zo * c2 / (c2 + lam[None, :])
        out = Z.copy()
        for k in range(self.d):
            comp = out[k]
            comp[outside] = w[k]
        return out

    def bounds(self):
        return 1.0 / float(np.max(self.axes)), 1.0 / float(np.min(self.axes))


def _make_base(name, d, params):
    if name == "euclidean":
        return _Euclidean(d)
    if name == "ell1":
        return _Ell1(d)
    if name == "ellipse":
        if "axes" not in params:
            raise MediumError("ellipse base norm needs params['axes']")
        return _Ellipse(d, params["axes"])
    raise MediumError(f"unknown base norm {name!r}; expected one of {_VALID_BASE_NORMS}")


# ---------------------------------------------------------------------------
# medium specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MediumSpec:
    """Declarative description of a periodic medium.

    kind: one of homogeneous | laminate | checkerboard-smoothed |
          smooth-trig | sampled
    base_norm: euclidean | ell1 | ellipse (ellipse takes params['axes'])
    params: kind-specific coefficient parameters, see PeriodicMetric.
    """

    kind: str
    base_norm: str = "euclidean"
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "base_norm": self.base_norm,
                           "params": _jsonable(self.params)}, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MediumSpec":
        obj = json.loads(text)
        if not isinstance(obj, dict) or set(obj) - {"kind", "base_norm", "params"}:
            raise MediumError(f"bad medium JSON keys: {sorted(obj)}")
        return MediumSpec(kind=obj["kind"], base_norm=obj.get("base_norm", "euclidean"),
                          params=obj.get("params", {}))


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def load_sampled_coefficients(path) -> np.ndarray:
    """Read a sampled coefficient grid from CSV (single column, header 'a').

    Values are row-major on an m x m cell grid over the unit period.
    """
    with open(path) as f:
        header = f.readline().strip()
    if header != "a":
        raise MediumError(f"sampled coefficient CSV must have header 'a', got {header!r}")
    vals = np.loadtxt(path, skiprows=1, dtype=float)
    m = int(round(np.sqrt(vals.size)))
    if m * m != vals.size:
        raise MediumError(f"sampled coefficient CSV length {vals.size} is not a square")
    return vals.reshape(m, m)


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------


class PeriodicMetric:
    """Callable family F(x, p) = a(x) N(p) on the d-torus.

    Vectorized over leading axes: x has shape (..., d), p/z broadcast
    against it.  The coefficient is evaluated at x mod 1 so callers may
    pass physical coordinates directly.
    """

    def __init__(self, spec: MediumSpec, d: int = 2):
        if spec.kind not in _VALID_KINDS:
            raise MediumError(f"unknown medium kind {spec.kind!r}; expected one of {_VALID_KINDS}")
        if d not in (2, 3):
            raise MediumError(f"d must be 2 or 3, got {d}")
        self.spec = spec
        self.d = d
        self.base = _make_base(spec.base_norm, d, spec.params)
        p = dict(spec.params)
        kind = spec.kind

        if kind == "homogeneous":
            a = float(p.get("a", 1.0))
            if a <= 0:
                raise MediumError("homogeneous coefficient must be positive")
            self._a_const = a
            a_min = a_max = a
        elif kind == "laminate":
            self._axis = int(p.get("axis", 1))
            if not 0 <= self._axis < d:
                raise MediumError(f"laminate axis {self._axis} out of range for d={d}")
            self._a_low = float(p["a_low"])
            self._a_high = float(p["a_high"])
            self._theta = float(p.get("theta", 0.5))
            if self._a_low <= 0 or self._a_high <= 0:
                raise MediumError("laminate coefficients must be positive")
            if not 0.0 < self._theta < 1.0:
                raise MediumError("laminate volume fraction theta must lie in (0, 1)")
            a_min = min(self._a_low, self._a_high)
            a_max = max(self._a_low, self._a_high)
        elif kind == "checkerboard-smoothed":
            self._a_low = float(p["a_low"])
            self._a_high = float(p["a_high"])
            self._width = float(p.get("width", 1.0 / 16.0))
            if self._a_low <= 0 or self._a_high <= 0:
                raise MediumError("checkerboard coefficients must be positive")
            if not 0.0 < self._width < 0.5:
                raise MediumError("transition width must lie in (0, 0.5)")
            a_min = min(self._a_low, self._a_high)
            a_max = max(self._a_low, self._a_high)
        elif kind == "smooth-trig":
            self._abar = float(p["abar"])
            self._beta = float(p.get("beta", 0.0))
            if self._beta < 0 or self._abar - self._beta <= 0:
                raise MediumError("smooth-trig needs 0 <= beta < abar")
            a_min = self._abar - self._beta
            a_max = self._abar + self._beta
        elif kind == "sampled":
            vals = np.asarray(p["values"], dtype=float)
            if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
                raise MediumError(f"sampled values must be a square matrix, got shape {vals.shape}")
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
                raise MediumError("sampled coefficients must be finite and positive")
            if d != 2:
                raise MediumError("sampled medium is 2-d only")
            self._values = vals
            a_min = float(vals.min())
            a_max = float(vals.max())

        self.a_min = a_min
        self.a_max = a_max
        n_min, n_max = self.base.bounds()
        self.c0 = min(a_min * n_min, 1.0 / (a_max * n_max))

    # -- coefficient ------------------------------------------------------

    def coefficient(self, x) -> np.ndarray:
        """a(x) for x of shape (..., d); 1-periodic in every coordinate."""
        x = np.asarray(x, dtype=float)
        xm = x - np.floor(x)  # fractional part, maps into [0, 1)
        kind = self.spec.kind
        if kind == "homogeneous":
            return np.full(x.shape[:-1], self._a_const)
        if kind == "laminate":
            t = xm[..., self._axis]
            return np.where(t < self._theta, self._a_low, self._a_high)
        if kind == "checkerboard-smoothed":
            s1 = self._soft_sign(xm[..., 0])
            s2 = self._soft_sign(xm[..., 1])
            abar = 0.5 * (self._a_low + self._a_high)
            beta = 0.5 * (self._a_high - self._a_low)
            return abar + beta * s1 * s2
        if kind == "smooth-trig":
            return self._abar + self._beta * np.cos(2 * np.pi * xm[..., 0]) * np.cos(2 * np.pi * xm[..., 1])
        # sampled: piecewise constant on its own m x m cell grid
        m = self._values.shape[0]
        i = np.minimum((xm[..., 0] * m).astype(int), m - 1)
        j = np.minimum((xm[..., 1] * m).astype(int), m - 1)
        return self._values[i, j]

    def _soft_sign(self, t):
        # square wave with linear-in-sin transition bands of width `width`
        # around the sign changes; continuous in x, values in [-1, 1].
        return np.clip(np.sin(2 * np.pi * t) / np.sin(np.pi * self._width), -1.0, 1.0)

    # -- pointwise operations ---------------------------------------------

    def eval(self, x, p) -> np.ndarray:
        """F(x, p) = a(x) N(p)."""
        P = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
        return self.coefficient(x) * self.base.norm(P)

    def polar_eval(self, x, z) -> np.ndarray:
        """F*(x, z) = N*(z) / a(x)."""
        Z = np.moveaxis(np.asarray(z, dtype=float), -1, 0)
        return self.base.polar(Z) / self.coefficient(x)

    def grad_p(self, x, p) -> np.ndarray:
        """dF/dp at (x, p), p != 0.  CapabilityError for non-smooth bases."""
        P = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
        g = self.base.grad(P)
        return np.moveaxis(g * self.coefficient(x)[None], 0, -1)

    def project_dual(self, x, z) -> np.ndarray:
        """Euclidean projection of z onto {w : F*(x, w) <= 1}."""
        Z = np.moveaxis(np.asarray(z, dtype=float), -1, 0)
        w = self.base.project_polar(Z, self.coefficient(x))
        return np.moveaxis(w, 0, -1)


def make_metric(spec: MediumSpec, d: int = 2) -> PeriodicMetric:
    return PeriodicMetric(spec, d=d)
