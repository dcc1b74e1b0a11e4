"""Isoperimetric solves: exact stencil energies, the exhaustive oracle,
penalized/constrained consistency, and the shape-comparison metrics."""

import math

import numpy as np
import pytest

from stablenorm import (BitMask, BoxGrid, IsoParams, MediumSpec, ScalarField,
                        SolverParams, brute_force_iso, diameter_report,
                        make_metric, set_energy, solve_iso, solve_penalized)
from stablenorm.iso import (_flip_delta, _flip_deltas_vec, _project_volume,
                            _site_coefficients, raster_polygon, select_level,
                            shape_metrics)
from stablenorm.tension import laminate_oracle, unit_directions, wulff_from_support

HOM = make_metric(MediumSpec("homogeneous", "euclidean", {"a": 1.0}))
SQ2 = math.sqrt(2.0)


def _mask(box, cells):
    v = np.zeros(box.shape, dtype=bool)
    for ij in cells:
        v[ij] = True
    return BitMask(box, v)


# ---------------------------------------------------------------------------
# the energy formula on masks
# ---------------------------------------------------------------------------


def test_exact_energies_homogeneous():
    # single cell: two axis sites at 1/h plus the far corner site at sqrt2/h
    box = BoxGrid(8, 1.0)
    h = box.h
    assert set_energy(HOM, box, _mask(box, [(3, 4)])) == pytest.approx(
        (2.0 + SQ2) * h, rel=1e-14)
    # 2x2 block: six unit sites plus one corner
    assert set_energy(HOM, box, _mask(box, [(3, 4), (3, 5), (4, 4), (4, 5)])) \
        == pytest.approx((6.0 + SQ2) * h, rel=1e-14)
    # 1x4 row
    row = [(3, j) for j in range(2, 6)]
    assert set_energy(HOM, box, _mask(box, row)) == pytest.approx(
        (8.0 + SQ2) * h, rel=1e-14)
    # full box: walls minus the one corner that merges into a diagonal site
    full = BitMask(box, np.ones(box.shape, dtype=bool))
    assert set_energy(HOM, box, full) == pytest.approx(
        4.0 * box.length - (2.0 - SQ2) * h, rel=1e-14)
    # empty
    empty = BitMask(box, np.zeros(box.shape, dtype=bool))
    assert set_energy(HOM, box, empty) == 0.0


def test_energy_against_direct_site_sum():
    # independent evaluation: loop the padded stencil by hand
    rng = np.random.default_rng(3)
    box = BoxGrid(6, 1.5)
    h = box.h
    vals = rng.uniform(0.5, 2.0, size=(4, 4))
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals.tolist()}))
    mask = rng.random(box.shape) < 0.4
    c = m.coefficient(box.site_centers())
    up = np.zeros((box.n + 2, box.n + 2))
    up[1:-1, 1:-1] = mask.astype(float)
    total = 0.0
    for a in range(box.n + 1):
        for b in range(box.n + 1):
            g0 = (up[a + 1, b] - up[a, b]) / h
            g1 = (up[a, b + 1] - up[a, b]) / h
            total += c[a, b] * math.hypot(g0, g1)
    expected = h * h * total
    assert set_energy(m, box, BitMask(box, mask)) == pytest.approx(expected, rel=1e-13)


def test_bulk_term_bound_and_recentering():
    rng = np.random.default_rng(4)
    box = BoxGrid(8, 2.0)
    g_raw = rng.normal(size=box.shape)
    g = ScalarField(box, g_raw - g_raw.mean())
    mask = BitMask(box, rng.random(box.shape) < 0.5)
    e0 = set_energy(HOM, box, mask)
    e1 = set_energy(HOM, box, mask, g=g)
    vol = np.count_nonzero(mask.values) * box.cell_volume
    assert abs(e1 - e0) <= np.max(np.abs(g.values)) * vol + 1e-12
    # params ingest recenters a biased bulk field
    p = IsoParams(box=box, volume=1.0, g=ScalarField(box, g_raw + 5.0))
    assert abs(float(np.mean(p.g.values))) <= 1e-12


def test_flip_deltas_match_joint_evaluation():
    rng = np.random.default_rng(11)
    box = BoxGrid(7, 1.0)
    vals = rng.uniform(0.5, 2.0, size=(5, 5))
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals.tolist()}))
    c = _site_coefficients(m, box, 1.0)
    g_arr = rng.normal(size=box.shape)
    u = (rng.random(box.shape) < 0.5).astype(float)
    cells = np.argwhere(np.ones(box.shape, dtype=bool))
    vec = _flip_deltas_vec(u, cells, c, m.base, box.h, g_arr)
    for idx, cell in enumerate(map(tuple, cells)):
        one = _flip_delta(u, [cell], c, m.base, box.h, g_arr)
        assert vec[idx] == pytest.approx(one, abs=1e-12)


# ---------------------------------------------------------------------------
# projections and level selection
# ---------------------------------------------------------------------------


def test_volume_projection_exact():
    rng = np.random.default_rng(5)
    for _ in range(20):
        u = rng.normal(size=(12, 12))
        vc = rng.uniform(1.0, 143.0)
        w = _project_volume(u, vc)
        assert np.all(w >= 0.0) and np.all(w <= 1.0)
        assert abs(float(np.sum(w)) - vc) <= 1e-10


def test_select_level_exact_count_and_ties():
    rng = np.random.default_rng(6)
    u = rng.random((9, 9))
    for vc in (3.0, 17.5, 80.0):
        mask, s = select_level(u, vc)
        assert np.count_nonzero(mask) == int(math.floor(vc + 0.5))
        assert np.all(u[mask] >= s - 1e-15)
    # a constant field still yields the requested count, lex-first cells
    mask, _ = select_level(np.ones((4, 4)), 5.0)
    assert np.count_nonzero(mask) == 5
    assert mask.reshape(-1)[:5].all()


# ---------------------------------------------------------------------------
# the exhaustive oracle and the solver
# ---------------------------------------------------------------------------


def test_brute_force_small_blocks():
    box = BoxGrid(4, 1.0)
    mask, e = brute_force_iso(HOM, box, volume=4 * box.cell_volume)
    assert e == pytest.approx((6.0 + SQ2) * box.h, rel=1e-14)
    # lexicographically first optimal block is the top-left one
    assert mask.values[:2, :2].all() and np.count_nonzero(mask.values) == 4


def test_solver_matches_oracle_random_instances():
    rng = np.random.default_rng(7)
    sp = SolverParams(max_iters=40000, tol_gap=1e-5, check_every=100)
    for trial in range(3):
        n = 4 if trial < 2 else 5
        box = BoxGrid(n, 1.0)
        vals = rng.uniform(0.5, 2.0, size=(n, n))
        m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals.tolist()}))
        k = int(rng.integers(3, 9))
        v = k * box.cell_volume
        _, e_star = brute_force_iso(m, box, volume=v)
        res = solve_iso(m, IsoParams(box=box, volume=v, solver=sp))
        assert res.energy == pytest.approx(e_star, abs=1e-9)
        assert abs(res.volume - v) <= box.cell_volume / 2 + 1e-12


def test_solver_matches_oracle_with_bulk_term():
    rng = np.random.default_rng(8)
    box = BoxGrid(4, 1.0)
    vals = rng.uniform(0.5, 2.0, size=(4, 4))
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals.tolist()}))
    g_raw = rng.normal(scale=2.0, size=box.shape)
    g = ScalarField(box, g_raw - g_raw.mean())
    v = 5 * box.cell_volume
    _, e_star = brute_force_iso(m, box, volume=v, g=g)
    res = solve_iso(m, IsoParams(box=box, volume=v, g=g,
                                 solver=SolverParams(max_iters=40000, tol_gap=1e-5,
                                                     check_every=100)))
    assert res.energy == pytest.approx(e_star, abs=1e-9)


def test_certificate_is_weak_duality_bound():
    box = BoxGrid(16, 2.0)
    res = solve_iso(HOM, IsoParams(box=box, volume=0.5,
                                   solver=SolverParams(max_iters=4000, tol_gap=1e-3,
                                                       check_every=50)))
    # the LP dual bound holds for every feasible density, mask included
    assert res.dual_bound <= res.relaxed_energy + 1e-9
    assert res.dual_bound <= res.energy + 1e-9
    assert res.relaxation_gap >= -1e-9
    for (_, primal, dual, gap) in res.history:
        assert dual <= primal + 1e-9
        assert gap >= -1e-9


def test_deterministic_rerun():
    box = BoxGrid(12, 1.0)
    vals = [[1.0, 2.0], [2.0, 1.0]]
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals}))
    p = IsoParams(box=box, volume=0.2,
                  solver=SolverParams(max_iters=3000, tol_gap=1e-3, check_every=50))
    a = solve_iso(m, p)
    b = solve_iso(m, p)
    assert np.array_equal(a.mask.values, b.mask.values)
    assert a.energy == b.energy


# ---------------------------------------------------------------------------
# penalized mode
# ---------------------------------------------------------------------------


def test_penalized_matches_oracle():
    rng = np.random.default_rng(9)
    box = BoxGrid(4, 1.0)
    vals = rng.uniform(0.5, 2.0, size=(4, 4))
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals.tolist()}))
    v = 6 * box.cell_volume
    mu = 8.0
    _, e_star = brute_force_iso(m, box, volume=v, mu=mu)
    res = solve_penalized(m, IsoParams(box=box, volume=v, mode="penalized", mu=mu,
                                       solver=SolverParams(max_iters=40000,
                                                           tol_gap=1e-5,
                                                           check_every=100)))
    achieved = res.energy + mu * abs(res.volume - v)
    assert achieved == pytest.approx(e_star, abs=1e-9)


def test_penalized_large_mu_recovers_constraint():
    box = BoxGrid(5, 1.0)
    v = 6 * box.cell_volume
    sp = SolverParams(max_iters=40000, tol_gap=1e-5, check_every=100)
    con = solve_iso(HOM, IsoParams(box=box, volume=v, solver=sp))
    pen = solve_penalized(HOM, IsoParams(box=box, volume=v, mode="penalized",
                                         mu=100.0, solver=sp))
    assert pen.volume == pytest.approx(con.volume, abs=1e-12)
    assert pen.energy == pytest.approx(con.energy, abs=2e-5)


def test_penalized_tiny_mu_prefers_empty():
    box = BoxGrid(5, 1.0)
    res = solve_penalized(HOM, IsoParams(box=box, volume=8 * box.cell_volume,
                                         mode="penalized", mu=1e-4,
                                         solver=SolverParams(max_iters=2000,
                                                             tol_gap=1e-2,
                                                             check_every=50)))
    assert not np.any(res.mask.values)
    assert res.energy == 0.0
    assert res.diameter == 0.0


# ---------------------------------------------------------------------------
# diameters, walls, and shape metrics
# ---------------------------------------------------------------------------


def test_diameter_values_and_wall_flag():
    box = BoxGrid(8, 2.0)
    rep = diameter_report(_mask(box, [(2, 2)]))
    assert rep.diameter == 0.0 and not rep.touches_wall
    rep = diameter_report(_mask(box, [(2, 2), (2, 6), (5, 2)]))
    # cell centers are 4 h apart horizontally, 3 h vertically
    assert rep.diameter == pytest.approx(5.0 * box.h, rel=1e-12)
    rep = diameter_report(_mask(box, [(0, 3), (4, 3)]))
    assert rep.touches_wall and rep.note == "box too small"
    with pytest.raises(ValueError):
        diameter_report(BitMask(box, np.zeros(box.shape, dtype=bool)))


def test_shape_metrics_translated_copy_is_exact():
    # an axis-aligned square Wulff rasterized, then translated by whole
    # cells: alignment must recover it with zero symmetric difference
    dirs = unit_directions(16)
    vals = np.sum(np.abs(dirs), axis=1)  # support of the unit square
    W = wulff_from_support(dirs, vals)
    box = BoxGrid(32, 4.0)
    rho = 0.5
    from stablenorm.iso import _polygon_area_centroid
    area, cen = _polygon_area_centroid(W.vertices * rho)
    center = np.array([2.0, 2.0])
    base_mask = raster_polygon(W.vertices * rho - cen + center, box)
    shift_cells = (3, -2)
    moved = np.roll(np.roll(base_mask, shift_cells[0], axis=0),
                    shift_cells[1], axis=1)
    sm = shape_metrics(BitMask(box, moved), W, rho, eps=1.0)
    assert sm.sym_diff == 0.0
    assert sm.centroid_shift[0] == pytest.approx(-shift_cells[0] * box.h)
    assert sm.centroid_shift[1] == pytest.approx(-shift_cells[1] * box.h)
    assert sm.hausdorff <= box.h


def test_validation_errors():
    box = BoxGrid(8, 1.0)
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=0.0)
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=2.0)
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=0.5, mode="penalized")
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=0.5, mode="blend")
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=0.5, eps=0.0)
    with pytest.raises(ValueError):
        IsoParams(box=box, volume=0.5,
                  g=ScalarField(BoxGrid(4, 1.0), np.zeros((4, 4))))
    with pytest.raises(ValueError):
        solve_iso(HOM, IsoParams(box=box, volume=0.5, mode="penalized", mu=1.0))
    with pytest.raises(ValueError):
        brute_force_iso(HOM, BoxGrid(6, 1.0), volume=0.5)
    with pytest.raises(ValueError):
        brute_force_iso(HOM, BoxGrid(5, 1.0), volume=0.5, mu=1.0)
