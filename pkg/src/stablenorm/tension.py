"""Sampling and probing the homogenized surface tension phi.

phi(p) is the value of the periodic cell problem at direction p: convex,
positively 1-homogeneous, and bounded by c0 |p| <= phi(p) <= |p| / c0.
This module samples phi over direction fans, estimates one-sided
directional derivatives (Richardson extrapolation over shrinking tilts),
probes rational directions for facet openings, checks strict convexity
via triangle-inequality slacks, builds the Wulff shape from support
samples, and hosts the exact laminate oracle

    phi(p) = max_{|c| <= min a} [ p_axis c + |p_perp| Integral sqrt(a(t)^2 - c^2) dt ],

the 1D reduction of the dual (calibration) problem for media a(x_axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cellproblem import CellSolution, SolverParams, solve_cell, subgradient_estimate
from .grid import TorusGrid
from .metric import MediumSpec, PeriodicMetric


# ---------------------------------------------------------------------------
# fan sampling
# ---------------------------------------------------------------------------


@dataclass
class FanRow:
    direction: np.ndarray  # unit vector
    phi: float
    gap: float
    certified: bool
    subgradient: np.ndarray

    @property
    def angle(self) -> float:
        return math.atan2(self.direction[1], self.direction[0])


@dataclass
class FanResult:
    rows: list
    n: int
    medium: MediumSpec

    @property
    def all_certified(self) -> bool:
        return all(r.certified for r in self.rows)


def unit_directions(k: int) -> np.ndarray:
    """k equi-angular unit vectors starting at angle 0 (so axes are
    included whenever 4 | k)."""
    th = 2.0 * np.pi * np.arange(k) / k
    return np.stack([np.cos(th), np.sin(th)], axis=1)


def _solve_direction(args):
    m, g, d, params = args
    sol = solve_cell(m, g, d, params)
    return FanRow(direction=d, phi=sol.primal, gap=sol.gap,
                  certified=sol.certified, subgradient=subgradient_estimate(sol))


def sample_fan(m: PeriodicMetric, g: TorusGrid, directions, params: SolverParams | None = None,
               workers: int = 1) -> FanResult:
    """One certified solve per direction; directions are normalized to
    unit length first.  Results keep input order."""
    dirs = [np.asarray(d, dtype=float) for d in directions]
    for d in dirs:
        if np.linalg.norm(d) == 0.0:
            raise ValueError("fan directions must be nonzero")
    dirs = [d / np.linalg.norm(d) for d in dirs]
    tasks = [(m, g, d, params) for d in dirs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_solve_direction, tasks))
    else:
        rows = [_solve_direction(t) for t in tasks]
    return FanResult(rows=rows, n=g.n, medium=m.spec)


# ---------------------------------------------------------------------------
# laminate oracle
# ---------------------------------------------------------------------------


@dataclass
class LaminateOracleResult:
    phi: float
    c_star: float
    facet_opening: float  # opening of phi at the lamination axis direction


def laminate_profile(m: PeriodicMetric):
    """(lengths, values, axis) of a laminate medium's 1D profile."""
    if m.spec.kind != "laminate":
        raise ValueError("not a laminate medium")
    th = m._theta
    return np.array([th, 1.0 - th]), np.array([m._a_low, m._a_high]), m._axis


def laminate_oracle(lengths, values, p, axis: int = 1) -> LaminateOracleResult:
    """Exact stable norm of a piecewise-constant laminate a(x_axis) with
    euclidean base norm, d = 2.

    The dual problem reduces to one scalar: divergence-free fields with
    F* <= 1 depending on x_axis alone have constant axis component c and
    free perpendicular component up to sqrt(a^2 - c^2), giving

        phi(p) = max_{|c| <= min a} [ p_ax c + |p_perp| I(c) ],
        I(c) = sum_j len_j sqrt(a_j^2 - c^2),

    a concave scalar maximization solved here by bisection on the
    monotone derivative (accurate to ~1e-14 in c, far below the 1e-10
    contract).  The facet opening at the axis direction is 2 I(min a).
    """
    lengths = np.asarray(lengths, dtype=float)
    values = np.asarray(values, dtype=float)
    if lengths.shape != values.shape or lengths.ndim != 1:
        raise ValueError("lengths and values must be matching 1D arrays")
    if np.any(lengths <= 0.0):
        raise ValueError("layer lengths must be positive")
    if abs(lengths.sum() - 1.0) > 1e-12:
        raise ValueError("layer lengths must sum to 1")
    if np.any(values <= 0.0):
        raise ValueError("profile must satisfy min a > 0")
    p = np.asarray(p, dtype=float)
    if p.shape != (2,):
        raise ValueError("oracle is 2-d only")

    amin = float(values.min())
    p_ax = float(p[axis])
    p_perp = abs(float(p[1 - axis]))

    def integral(c):
        return float(np.sum(lengths * np.sqrt(np.maximum(values**2 - c * c, 0.0))))

    opening = 2.0 * integral(amin)

    if p_perp == 0.0:
        c_star = math.copysign(amin, p_ax) if p_ax != 0.0 else 0.0
        return LaminateOracleResult(phi=abs(p_ax) * amin, c_star=c_star, facet_opening=opening)

    # d/dc [p_ax c + p_perp I(c)] = p_ax - p_perp c sum len/sqrt(a^2-c^2),
    # strictly decreasing, -> +-inf at c -> -+ min a: root is interior.
    def deriv(c):
        return p_ax - p_perp * float(np.sum(lengths * c / np.sqrt(values**2 - c * c)))

    lo, hi = -amin, amin
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < 1e-15 * amin:
            break
        if deriv(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    c_star = 0.5 * (lo + hi)
    phi = p_ax * c_star + p_perp * integral(c_star)
    return LaminateOracleResult(phi=phi, c_star=c_star, facet_opening=opening)


def oracle_for_medium(m: PeriodicMetric, p) -> LaminateOracleResult:
    lengths, values, axis = laminate_profile(m)
    if m.spec.base_norm != "euclidean":
        raise ValueError("laminate oracle needs the euclidean base norm")
    return laminate_oracle(lengths, values, p, axis=axis)


# ---------------------------------------------------------------------------
# directional derivatives and facet probing
# ---------------------------------------------------------------------------


class SolveCache:
    """Memoizes certified solves keyed by exact direction tuples (tilt
    magnitudes are dyadic so p + t q rounds identically every time)."""

    def __init__(self, m: PeriodicMetric, g: TorusGrid, params: SolverParams):
        self.m = m
        self.g = g
        self.params = params
        self._store: dict = {}

    def solve(self, p) -> CellSolution:
        key = tuple(float(x) for x in p)
        if key not in self._store:
            self._store[key] = solve_cell(self.m, self.g, np.asarray(p, dtype=float), self.params)
        return self._store[key]


def derivative_solver_params(base: SolverParams | None = None) -> SolverParams:
    """Tighter-gap defaults for derivative estimation: Richardson
    amplifies value errors by ~ 22/t0, so the default fan tolerance would
    swamp facet thresholds."""
    if base is not None:
        return base
    return SolverParams(max_iters=400000, tol_gap=2e-5, check_every=200)


@dataclass
class DerivativeEstimate:
    value: float
    error_bar: float
    poisoned: bool  # an uncertified solve contributed
    t0: float
    samples: list = field(default_factory=list)  # (t, phi, gap)


def directional_derivative(m: PeriodicMetric, g: TorusGrid, p, q,
                           params: SolverParams | None = None,
                           t0: float = 0.125,
                           cache: SolveCache | None = None) -> DerivativeEstimate:
    """One-sided derivative phi'(p; q) from certified values at tilts
    t in {t0, t0/2, t0/4}: Richardson extrapolation of the chords
    D(t) = (phi(p + t q) - phi(p))/t.

    The error bar is max(|extrapolation correction|, gap-induced bound),
    the latter from the recorded duality gaps with the exact Richardson
    weights (values are upper bounds, biased by at most their gap).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.linalg.norm(p) == 0.0 or np.linalg.norm(q) == 0.0:
        raise ValueError("need |p| > 0 and q != 0")
    cache = cache or SolveCache(m, g, derivative_solver_params(params))

    sol0 = cache.solve(p)
    ts = [t0, t0 / 2.0, t0 / 4.0]
    sols = [cache.solve(p + t * q) for t in ts]
    D = [(s.primal - sol0.primal) / t for s, t in zip(sols, ts)]
    r1a = 2.0 * D[1] - D[0]
    r1b = 2.0 * D[2] - D[1]
    r2 = (4.0 * r1b - r1a) / 3.0
    extrap_corr = abs(r2 - r1b)
    # R2 = (8 D(t/4) - 6 D(t/2) + D(t))/3; each phi carries bias in [0, gap]
    g0, g1, g2, g3 = sol0.gap, sols[0].gap, sols[1].gap, sols[2].gap
    gap_unc = (32.0 * abs(g3) + 12.0 * abs(g2) + abs(g1) + 21.0 * abs(g0)) / (3.0 * t0)
    poisoned = not (sol0.certified and all(s.certified for s in sols))
    samples = [(0.0, sol0.primal, sol0.gap)] + [(t, s.primal, s.gap) for t, s in zip(ts, sols)]
    return DerivativeEstimate(value=r2, error_bar=max(extrap_corr, gap_unc),
                              poisoned=poisoned, t0=t0, samples=samples)


@dataclass
class FacetProbe:
    q: np.ndarray  # integer vector, canonical sign
    opening: float
    error_bar: float
    threshold: float
    verdict: str  # kink | smooth | inconclusive


@dataclass
class FacetReport:
    p: np.ndarray
    probes: list
    k_hat: int
    delta_facet: float
    certified: bool


def orthogonal_probes(p, q_max: int = 3):
    """Integer vectors q with q . p = 0 and 0 < |q| <= q_max, one per
    antipodal pair (first nonzero component positive)."""
    p = np.asarray(p)
    out = []
    rng = range(-q_max, q_max + 1)
    for q1 in rng:
        for q2 in rng:
            q = np.array([q1, q2])
            if q1 == 0 and q2 == 0:
                continue
            if int(q @ p) != 0 or q1 * q1 + q2 * q2 > q_max * q_max:
                continue
            if q1 < 0 or (q1 == 0 and q2 < 0):
                continue
            out.append(q)
    return out


def facet_probe(m: PeriodicMetric, g: TorusGrid, p, params: SolverParams | None = None,
                q_max: int = 3, delta_facet: float = 0.05, t0: float = 0.125) -> FacetReport:
    """Probe a rational direction for facet openings.

    opening(q) = phi'(p;q) + phi'(p;-q) >= 0 measures the width of the
    subdifferential along q.  Verdict per probe: kink if the opening
    clears max(delta_facet, 3 error bars); smooth if both the opening and
    3 error bars stay below delta_facet; inconclusive otherwise.  k_hat is
    the integer rank of the kink probes (a lower bound for the facet
    dimension: only probed q's count).
    """
    p = np.asarray(p)
    if not np.allclose(p, np.round(p)):
        raise ValueError("facet_probe wants an integer direction (rationality explicit)")
    p = p.astype(float)
    cache = SolveCache(m, g, derivative_solver_params(params))
    probes = []
    poisoned = False
    for q in orthogonal_probes(p, q_max):
        dplus = directional_derivative(m, g, p, q, cache=cache, t0=t0)
        dminus = directional_derivative(m, g, p, -q, cache=cache, t0=t0)
        opening = dplus.value + dminus.value
        err = dplus.error_bar + dminus.error_bar
        poisoned |= dplus.poisoned or dminus.poisoned
        threshold = max(delta_facet, 3.0 * err)
        if opening > threshold:
            verdict = "kink"
        elif opening <= delta_facet and 3.0 * err <= delta_facet:
            verdict = "smooth"
        else:
            verdict = "inconclusive"
        probes.append(FacetProbe(q=q.astype(int), opening=opening, error_bar=err,
                                 threshold=threshold, verdict=verdict))
    kinks = [pr.q for pr in probes if pr.verdict == "kink"]
    k_hat = int(np.linalg.matrix_rank(np.array(kinks))) if kinks else 0
    return FacetReport(p=p.astype(int), probes=probes, k_hat=k_hat,
                       delta_facet=delta_facet, certified=not poisoned)


# ---------------------------------------------------------------------------
# strict convexity
# ---------------------------------------------------------------------------


@dataclass
class ConvexityPair:
    p1: np.ndarray
    p2: np.ndarray
    angle_deg: float
    slack: float
    gap_budget: float  # sum of the three duality gaps
    parallel: bool


@dataclass
class ConvexityReport:
    pairs: list
    min_slack_nonparallel: float
    certified: bool


def strict_convexity_scan(m: PeriodicMetric, g: TorusGrid, fan: FanResult,
                          params: SolverParams | None = None, num_pairs: int = 20,
                          min_angle_deg: float = 10.0, seed: int = 0,
                          include_parallel: bool = True) -> ConvexityReport:
    """Triangle-inequality slacks phi(p1) + phi(p2) - phi(p1 + p2) over
    sampled non-parallel unit pairs from a certified fan (plus parallel
    control pairs p, 2p whose slack vanishes by homogeneity).  Strict
    convexity is witnessed when every non-parallel slack clears its gap
    budget."""
    if not fan.all_certified:
        raise ValueError("convexity scan needs a certified fan")
    params = params or SolverParams(max_iters=200000, tol_gap=2e-4)
    cache = SolveCache(m, g, params)
    rng = np.random.default_rng(seed)
    dirs = [r.direction for r in fan.rows]
    phis = [r.phi for r in fan.rows]
    gaps = [abs(r.gap) for r in fan.rows]
    k = len(dirs)
    pairs = []
    poisoned = False
    seen = set()
    guard = 0
    while len(pairs) < num_pairs and guard < 100 * num_pairs:
        guard += 1
        i, j = int(rng.integers(k)), int(rng.integers(k))
        if i == j or (i, j) in seen or (j, i) in seen:
            continue
        cosang = float(np.clip(dirs[i] @ dirs[j], -1.0, 1.0))
        ang = math.degrees(math.acos(cosang))
        if ang < min_angle_deg or ang > 180.0 - 1e-9:
            continue  # near-parallel (or antipodal: p1+p2 ~ 0) excluded
        seen.add((i, j))
        sol = cache.solve(dirs[i] + dirs[j])
        poisoned |= not sol.certified
        slack = phis[i] + phis[j] - sol.primal
        pairs.append(ConvexityPair(p1=dirs[i], p2=dirs[j], angle_deg=ang, slack=slack,
                                   gap_budget=gaps[i] + gaps[j] + abs(sol.gap), parallel=False))
    if include_parallel:
        for i in (0, k // 3):
            sol = cache.solve(2.0 * dirs[i])
            poisoned |= not sol.certified
            slack = 2.0 * phis[i] - sol.primal
            pairs.append(ConvexityPair(p1=dirs[i], p2=dirs[i], angle_deg=0.0, slack=slack,
                                       gap_budget=2.0 * gaps[i] + abs(sol.gap), parallel=True))
    nonpar = [pr.slack for pr in pairs if not pr.parallel]
    return ConvexityReport(pairs=pairs,
                           min_slack_nonparallel=min(nonpar) if nonpar else math.inf,
                           certified=not poisoned)


# ---------------------------------------------------------------------------
# Wulff shape
# ---------------------------------------------------------------------------


@dataclass
class WulffShape:
    support_dirs: np.ndarray   # (k, 2) unit normals
    support_vals: np.ndarray   # (k,) phi values
    vertices: np.ndarray       # (M, 2) counterclockwise
    area: float


def wulff_from_support(dirs, vals) -> WulffShape:
    """W = intersection of half-planes {x . nu_j <= phi_j}, as the convex
    dual of the hull of the points nu_j / phi_j.  Hull edges map to W
    vertices (two-constraint intersections); interior points are exactly
    the pruned redundant constraints."""
    from scipy.spatial import ConvexHull

    dirs = np.asarray(dirs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0.0):
        raise ValueError("support values must be positive")
    pts = dirs / vals[:, None]
    hull = ConvexHull(pts)
    idx = hull.vertices  # counterclockwise
    k = len(idx)
    if k < 3:
        raise ValueError("degenerate Wulff shape: fewer than 3 active half-planes")
    verts = []
    for a in range(k):
        i, j = idx[a], idx[(a + 1) % k]
        A = np.array([pts[i], pts[j]])
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) < 1e-14:
            continue  # same supporting line
        verts.append(np.linalg.solve(A, np.ones(2)))
    V = np.array(verts)
    x, y = V[:, 0], V[:, 1]
    area = 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    return WulffShape(support_dirs=dirs, support_vals=vals, vertices=V, area=area)


def build_wulff(fan: FanResult, min_directions: int = 16) -> WulffShape:
    rows = [r for r in fan.rows if r.certified]
    if len(rows) < min_directions:
        raise ValueError(f"need at least {min_directions} certified fan directions, got {len(rows)}")
    dirs = np.array([r.direction for r in rows])
    vals = np.array([r.phi for r in rows])
    return wulff_from_support(dirs, vals)
