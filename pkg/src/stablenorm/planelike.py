"""Plane-like minimizers as level sets of v_p + p.x on an extended strip.

For integer p the periodic corrector tiles the strip exactly and
u(x + q) = u(x) + p.q holds for every integer translation q, cell-wise
and in exact arithmetic.  Everything here is pure analysis over a
finished CellSolution: slab confinement, Birkhoff nesting, ordering of
level sets, lamination gaps, and calibration residuals.

2-d strips only; the window is the square [-copies, copies]^2 in units
of the fundamental cell, which contains the relevant slab for every
direction as long as |s|/|p| stays well inside it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .cellproblem import CellSolution
from .grid import gradient
from .metric import PeriodicMetric


@dataclass
class PlaneLikeSet:
    """Discrete superlevel set {v_p(x mod 1) + p.x > s} on a square strip
    window of 2*copies fundamental cells per side."""

    p: np.ndarray
    s: float
    copies: int
    n: int
    values: np.ndarray  # bool, (2*copies*n, 2*copies*n)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def window_origin(self) -> float:
        return -float(self.copies)

    def cell_centers(self) -> np.ndarray:
        m = self.values.shape[0]
        ax = self.window_origin + (np.arange(m) + 0.5) * self.h
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass
class SlabReport:
    p: np.ndarray
    s: float
    copies: int
    m_obs: float         # max over boundary cells of |p.x - s| / |p|
    m_obs_wide: float    # same on a strip widened by 2 copies
    stable: bool         # |m_obs - m_obs_wide| <= h
    passed: bool         # finite and stable


@dataclass
class BirkhoffEntry:
    q: tuple
    sign: int            # sign of p.q
    required: str        # "superset" (E+q contains E), "subset", or "equal"
    violations: int
    passed: bool


@dataclass
class BirkhoffReport:
    p: np.ndarray
    q_max: int
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def total_violations(self) -> int:
        return sum(e.violations for e in self.entries)


@dataclass
class LaminationReport:
    p: np.ndarray
    eta: float
    fraction: float          # gap volume fraction in the fundamental cell
    n_components: int        # periodic connected components of the gap set
    gap_mask: np.ndarray     # bool, (n, n)


@dataclass
class CalibrationReport:
    p: np.ndarray
    eta: float
    cells: int               # boundary cells entering the statistics
    sup_residual: float
    mean_residual: float     # |p + Dv|-weighted mean


@dataclass
class OrderingReport:
    verdict: str             # "equal" | "E1<=E2" | "E2<=E1" | "crossing"
    only_in_e1: int
    only_in_e2: int
    witnesses_e1: list = field(default_factory=list)
    witnesses_e2: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def _integer_direction(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    pi = np.rint(p)
    if np.max(np.abs(p - pi)) > 1e-9 or not np.any(pi):
        raise ValueError(f"plane-like extraction needs a nonzero integer direction, got {p}")
    return pi


def extract_planelike(sol: CellSolution, s: float, copies: int = 2) -> PlaneLikeSet:
    """Threshold u(x) = v_p(x mod 1) + p.x at level s on the strip window.

    Monotone in s by construction: raising s shrinks the set.
    """
    p = _integer_direction(sol.p)
    if sol.grid.d != 2:
        raise ValueError("plane-like strips are 2-d only")
    if not sol.certified:
        raise ValueError("refusing to extract a plane-like set from an uncertified solve")
    if copies < 1:
        raise ValueError("need at least one fundamental-cell copy per side")
    n = sol.grid.n
    tiled = np.tile(sol.v.values, (2 * copies, 2 * copies))
    m = 2 * copies * n
    # p.x assembled from one exact integer-plus-half numerator per cell:
    # shifting the index by q*n with p.q = 0 leaves the numerator bitwise
    # unchanged, so q-translates of the mask are exactly equal and the
    # Birkhoff checks are not at the mercy of rounding near the interface
    k = np.arange(m) - copies * n + 0.5
    u = tiled + (p[0] * k[:, None] + p[1] * k[None, :]) / n
    return PlaneLikeSet(p=p, s=float(s), copies=copies, n=n, values=u > s)


def boundary_cells(E: PlaneLikeSet) -> np.ndarray:
    """Cells whose mask value differs from a 4-neighbor inside the window
    (both sides of the interface)."""
    v = E.values
    b = np.zeros_like(v)
    d0 = v[1:, :] != v[:-1, :]
    b[1:, :] |= d0
    b[:-1, :] |= d0
    d1 = v[:, 1:] != v[:, :-1]
    b[:, 1:] |= d1
    b[:, :-1] |= d1
    return b


def _m_obs(E: PlaneLikeSet) -> float:
    b = boundary_cells(E)
    if not np.any(b):
        return float("inf")
    x = E.cell_centers()[b]
    return float(np.max(np.abs(x @ E.p - E.s)) / np.linalg.norm(E.p))


def slab_report(sol: CellSolution, s: float, copies: int = 2) -> SlabReport:
    """Measure the slab half-width and check it is stable under widening.

    The continuum bound is a constant depending only on the ellipticity;
    here only finiteness and stability (change <= h under widening by two
    copies) are asserted.
    """
    E = extract_planelike(sol, s, copies)
    E_wide = extract_planelike(sol, s, copies + 2)
    m1, m2 = _m_obs(E), _m_obs(E_wide)
    stable = np.isfinite(m1) and np.isfinite(m2) and abs(m1 - m2) <= E.h
    return SlabReport(p=E.p, s=E.s, copies=copies, m_obs=m1, m_obs_wide=m2,
                      stable=bool(stable), passed=bool(np.isfinite(m1) and stable))


# ---------------------------------------------------------------------------
# Birkhoff property and ordering
# ---------------------------------------------------------------------------


def _shift_overlap(values: np.ndarray, t0: int, t1: int):
    """Views (shifted, original) of E+t and E on their common window."""
    m0, m1 = values.shape
    dst0 = slice(max(t0, 0), m0 + min(t0, 0))
    dst1 = slice(max(t1, 0), m1 + min(t1, 0))
    src0 = slice(max(-t0, 0), m0 + min(-t0, 0))
    src1 = slice(max(-t1, 0), m1 + min(-t1, 0))
    return values[src0, src1], values[dst0, dst1]


def check_birkhoff(E: PlaneLikeSet, q_max: int = 3) -> BirkhoffReport:
    """Containment of E against all its integer translates |q|_inf <= q_max.

    E + q must contain E when p.q <= 0 and be contained in E when
    p.q >= 0 (both, i.e. equality, when p.q = 0).  Exact on the common
    window; every violation cell is counted.
    """
    if 2 * E.copies <= q_max:
        raise ValueError(f"strip with copies={E.copies} too narrow for q_max={q_max}")
    rep = BirkhoffReport(p=E.p, q_max=q_max)
    for q0 in range(-q_max, q_max + 1):
        for q1 in range(-q_max, q_max + 1):
            if q0 == 0 and q1 == 0:
                continue
            pq = float(E.p[0] * q0 + E.p[1] * q1)
            shifted, orig = _shift_overlap(E.values, q0 * E.n, q1 * E.n)
            # shifted holds (E+q) read on the overlap window
            viol = 0
            if pq >= 0.0:
                viol += int(np.count_nonzero(shifted & ~orig))  # E+q must sit inside E
            if pq <= 0.0:
                viol += int(np.count_nonzero(orig & ~shifted))
            required = "equal" if pq == 0.0 else ("subset" if pq > 0 else "superset")
            rep.entries.append(BirkhoffEntry(q=(q0, q1), sign=int(np.sign(pq)),
                                             required=required,
                                             violations=viol, passed=viol == 0))
    return rep


def check_ordering(E1: PlaneLikeSet, E2: PlaneLikeSet, max_witnesses: int = 8) -> OrderingReport:
    """Containment verdict for two plane-like sets in the same direction,
    exact on the common (centered) window."""
    if not np.array_equal(E1.p, E2.p) or E1.n != E2.n:
        raise ValueError("ordering check needs the same direction and resolution")
    c = min(E1.copies, E2.copies)
    v1, v2 = E1.values, E2.values
    if E1.copies > c:
        k = (E1.copies - c) * E1.n
        v1 = v1[k:-k, k:-k]
    if E2.copies > c:
        k = (E2.copies - c) * E2.n
        v2 = v2[k:-k, k:-k]
    only1 = v1 & ~v2
    only2 = v2 & ~v1
    n1, n2 = int(np.count_nonzero(only1)), int(np.count_nonzero(only2))
    if n1 == 0 and n2 == 0:
        verdict = "equal"
    elif n1 == 0:
        verdict = "E1<=E2"
    elif n2 == 0:
        verdict = "E2<=E1"
    else:
        verdict = "crossing"
    w1 = [tuple(int(c) for c in idx) for idx in np.argwhere(only1)[:max_witnesses]]
    w2 = [tuple(int(c) for c in idx) for idx in np.argwhere(only2)[:max_witnesses]]
    return OrderingReport(verdict=verdict, only_in_e1=n1, only_in_e2=n2,
                          witnesses_e1=w1, witnesses_e2=w2)


# ---------------------------------------------------------------------------
# lamination gaps and calibration residuals
# ---------------------------------------------------------------------------


def _gradient_field(sol: CellSolution) -> np.ndarray:
    G = gradient(sol.v).values.copy()
    for k in range(sol.grid.d):
        G[k] += sol.p[k]
    return G


def _periodic_component_count(mask: np.ndarray) -> int:
    """Connected components of a cell mask on the torus (4-neighbor,
    wrapped across both axes)."""
    labels, k = ndimage.label(mask)
    if k == 0:
        return 0
    parent = list(range(k + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for a, b in ((labels[0, :], labels[-1, :]), (labels[:, 0], labels[:, -1])):
        both = (a > 0) & (b > 0)
        for la, lb in zip(a[both], b[both]):
            union(int(la), int(lb))
    return len({find(l) for l in range(1, k + 1)})


def lamination_coverage(sol: CellSolution, eta: float | None = None) -> LaminationReport:
    """Gap cells {|p + Dv| < eta} of the lamination swept by the level
    sets; plateau regions of u are exactly the unswept regions."""
    if not sol.certified:
        raise ValueError("lamination coverage needs a certified solve")
    p = np.asarray(sol.p, dtype=float)
    if eta is None:
        eta = 0.1 * float(np.linalg.norm(p))
    G = _gradient_field(sol)
    mag = np.sqrt(np.sum(G * G, axis=0))
    gap = mag < eta
    return LaminationReport(p=p, eta=float(eta),
                            fraction=float(np.mean(gap)),
                            n_components=_periodic_component_count(gap),
                            gap_mask=gap)


def calibration_residuals(m: PeriodicMetric, grid, z: np.ndarray, G: np.ndarray,
                          eta: float):
    """Per-cell residual |z . nu - F(x, nu)| with nu = G/|G|, restricted to
    cells with |G| >= eta.  Returns (residuals, weights, mask); weights are
    the gradient magnitudes, mirroring the |Dv_p + p|-a.e. statement."""
    mag = np.sqrt(np.sum(G * G, axis=0))
    mask = mag >= eta
    if not np.any(mask):
        return np.zeros(0), np.zeros(0), mask
    nu = G[:, mask] / mag[mask]
    x = grid.cell_centers()[mask]
    nu_rows = np.moveaxis(nu, 0, -1)
    res = np.abs(np.sum(z[:, mask] * nu, axis=0) - m.eval(x, nu_rows))
    return res, mag[mask], mask


def check_calibration(m: PeriodicMetric, sol: CellSolution,
                      eta: float | None = None) -> CalibrationReport:
    """Residual statistics of the dual field against the pointwise
    equality [z, nu] = F(x, nu) on boundary cells {|p + Dv| >= eta}.

    The weighted mean is controlled by the duality gap (complementarity
    defect); the sup can stay O(1) on cells the optimal boundary avoids.
    """
    p = np.asarray(sol.p, dtype=float)
    if eta is None:
        eta = 0.1 * float(np.linalg.norm(p))
    G = _gradient_field(sol)
    res, w, mask = calibration_residuals(m, sol.grid, sol.z.values, G, eta)
    if res.size == 0:
        return CalibrationReport(p=p, eta=float(eta), cells=0,
                                 sup_residual=0.0, mean_residual=0.0)
    return CalibrationReport(p=p, eta=float(eta), cells=int(res.size),
                             sup_residual=float(np.max(res)),
                             mean_residual=float(np.sum(res * w) / np.sum(w)))


# ---------------------------------------------------------------------------
# reporting helpers
# ---------------------------------------------------------------------------


def boundary_component_counts(E: PlaneLikeSet) -> dict:
    """Connected components of the boundary-cell set under 4- and
    8-neighbor conventions.  Reported only: the continuum statement is
    convention-dependent on a pixel grid."""
    b = boundary_cells(E)
    _, k4 = ndimage.label(b)
    _, k8 = ndimage.label(b, structure=np.ones((3, 3), dtype=int))
    return {"four": int(k4), "eight": int(k8)}


def save_planelike_csv(path, E: PlaneLikeSet) -> None:
    """Cell indices i,j of the set, lex order, with a JSON sidecar holding
    the window geometry."""
    idx = np.argwhere(E.values)
    with open(path, "w") as f:
        f.write("i,j\n")
        for row in idx:
            f.write(f"{int(row[0])},{int(row[1])}\n")
    meta = {"p": [int(c) for c in E.p], "s": E.s, "copies": E.copies,
            "n": E.n, "h": E.h, "window_origin": E.window_origin,
            "count": int(idx.shape[0])}
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
        f.write("\n")
