"""Periodic cell problem for the homogenized surface tension.

For a direction p the discrete cell problem on the n^d torus is

    phi_n(p) = min_v  h^d sum_i F(x_i, p + (Dv)_i)

over periodic cell fields v, with D the forward-difference gradient.  The
minimum is computed by a primal-dual (Chambolle-Pock) iteration on the
saddle form

    min_v max_{F*(x_i, z_i) <= 1}  h^d sum_i z_i . (p + (Dv)_i),

whose inner maximum recovers F pointwise.  Iteration:

    z <- project_dual(z + sigma (p + D vbar))
    v <- v + tau div z
    vbar <- 2 v_new - v_old

with tau = sigma = h/(2 sqrt(d)), so tau sigma |D|^2 <= 1.

Certificates, not vibes: at a fixed cadence the solver evaluates the
primal energy, the dual value mean(z) . p, their gap, and the divergence
residual |div z|_h.  A run is certified when

    gap <= tol_gap * primal   and   |div z|_h <= tol_feas.

Both bounds are reported; nothing is post-corrected.  The dual vector
mean(z) of a certified run approximates a subgradient of phi at p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, TorusGrid, VectorField, divergence, gradient
from .metric import PeriodicMetric


@dataclass
class SolverParams:
    max_iters: int = 20000
    tol_gap: float = 1e-3          # relative duality gap
    tol_feas: float | None = None  # absolute |div z|_h; default 1e-6 * n
    check_every: int = 50
    tau: float | None = None       # default h / (2 sqrt(d))
    sigma: float | None = None

    def steps(self, grid: TorusGrid):
        tau = self.tau if self.tau is not None else grid.h / (2.0 * math.sqrt(grid.d))
        sigma = self.sigma if self.sigma is not None else grid.h / (2.0 * math.sqrt(grid.d))
        # |D|^2 <= 4 d / h^2 for the forward-difference gradient
        if tau * sigma * 4.0 * grid.d / grid.h**2 > 1.0 + 1e-9:
            raise ValueError("step sizes violate tau * sigma * |D|^2 <= 1")
        return tau, sigma

    def feas_tol(self, grid: TorusGrid) -> float:
        return self.tol_feas if self.tol_feas is not None else 1e-6 * grid.n


@dataclass
class CellSolution:
    p: np.ndarray
    grid: TorusGrid
    v: ScalarField
    z: VectorField
    primal: float
    dual: float
    gap: float
    div_residual: float
    feas_residual: float
    iters: int
    certified: bool
    history: list = field(default_factory=list)  # (iter, primal, dual, gap, div_res, |v|_h)

    @property
    def rel_gap(self) -> float:
        return self.gap / self.primal if self.primal > 0 else math.inf


def primal_energy(m: PeriodicMetric, g: TorusGrid, p, v: ScalarField) -> float:
    """h^d sum F(x_i, p + (Dv)_i) for an explicit competitor v."""
    p = np.asarray(p, dtype=float)
    a = m.coefficient(g.cell_centers())
    grad = gradient(v).values + p.reshape((g.d,) + (1,) * g.d)
    return float(np.sum(a * m.base.norm(grad))) * g.cell_volume


def solve_cell(m: PeriodicMetric, g: TorusGrid, p, params: SolverParams | None = None) -> CellSolution:
    """Minimize the cell functional at direction p; never raises on
    non-convergence, the returned solution just stays uncertified."""
    params = params or SolverParams()
    p = np.asarray(p, dtype=float)
    if p.shape != (g.d,):
        raise ValueError(f"direction must have shape ({g.d},)")
    if m.d != g.d:
        raise ValueError("metric and grid dimensions disagree")
    tau, sigma = params.steps(g)
    tol_feas = params.feas_tol(g)
    h = g.h
    vol = g.cell_volume
    pcol = p.reshape((g.d,) + (1,) * g.d)

    a = m.coefficient(g.cell_centers())
    base = m.base

    v = np.zeros(g.shape)
    vbar = np.zeros(g.shape)
    z = np.zeros((g.d,) + g.shape)

    def grad_arr(u):
        return np.stack([(np.roll(u, -1, axis=k) - u) / h for k in range(g.d)], axis=0)

    def div_arr(Z):
        out = (Z[0] - np.roll(Z[0], 1, axis=0)) / h
        for k in range(1, g.d):
            out += (Z[k] - np.roll(Z[k], 1, axis=k)) / h
        return out

    history = []
    primal = float(np.sum(a * base.norm(pcol * np.ones((1,) + g.shape)))) * vol
    dual = 0.0
    gap = primal
    div_res = 0.0
    feas = 0.0
    certified = False
    it = 0

    for it in range(1, params.max_iters + 1):
        z = base.project_polar(z + sigma * (pcol + grad_arr(vbar)), a)
        dz = div_arr(z)
        v_new = v + tau * dz
        vbar = 2.0 * v_new - v
        v = v_new

        if it % params.check_every == 0 or it == params.max_iters:
            shift = np.mean(v)
            v -= shift
            vbar -= shift
            primal = float(np.sum(a * base.norm(pcol + grad_arr(v)))) * vol
            zbar = np.array([np.mean(z[k]) for k in range(g.d)])
            dual = float(zbar @ p)
            gap = primal - dual
            dz = div_arr(z)
            div_res = math.sqrt(float(np.sum(dz * dz)) * vol)
            feas = float(np.max(base.polar(z) / a)) - 1.0
            vnorm = math.sqrt(float(np.sum(v * v)) * vol)
            history.append((it, primal, dual, gap, div_res, vnorm))
            if gap <= params.tol_gap * primal and div_res <= tol_feas:
                certified = True
                break

    return CellSolution(
        p=p, grid=g,
        v=ScalarField(g, v),
        z=VectorField(g, z),
        primal=primal, dual=dual, gap=gap,
        div_residual=div_res, feas_residual=max(feas, 0.0),
        iters=it, certified=certified, history=history,
    )


def subgradient_estimate(sol: CellSolution) -> np.ndarray:
    """mean(z): a subgradient of phi at p for certified runs; by
    construction its dot with p equals the dual value."""
    Z = sol.z.values
    return np.array([float(np.mean(Z[k])) for k in range(sol.grid.d)])
