"""Cell-problem solver: certified values against closed forms, duality
bookkeeping, and exact invariances."""

import numpy as np
import pytest

from stablenorm import (
    ScalarField,
    MediumSpec,
    SolverParams,
    TorusGrid,
    make_metric,
    solve_cell,
)
from stablenorm.cellproblem import primal_energy, subgradient_estimate

LAM = make_metric(MediumSpec("laminate", "euclidean",
                             {"axis": 1, "a_low": 1.0, "a_high": 2.0, "theta": 0.5}))
HOM = make_metric(MediumSpec("homogeneous", "euclidean", {"a": 1.0}))


def test_homogeneous_is_norm():
    g = TorusGrid(2, 32)
    for p in ([0.6, 0.8], [1.0, 0.0], [-2.0, 1.0]):
        sol = solve_cell(HOM, g, np.array(p), SolverParams(tol_gap=1e-8))
        assert sol.certified
        assert sol.primal == pytest.approx(np.linalg.norm(p), rel=1e-7)


def test_laminate_axis_values():
    g = TorusGrid(2, 32)
    sol = solve_cell(LAM, g, np.array([1.0, 0.0]), SolverParams(tol_gap=1e-6, max_iters=50000))
    assert sol.certified
    assert sol.primal == pytest.approx(1.5, abs=2e-6)
    # e2 crosses the layers: the facet direction, slow but certified
    sol = solve_cell(LAM, g, np.array([0.0, 1.0]), SolverParams(tol_gap=1e-4, max_iters=60000))
    assert sol.certified
    assert sol.primal == pytest.approx(1.0, abs=2e-4)


def test_laminate_oblique_matches_oracle():
    # frozen from the layer-profile oracle (validated against an
    # independent SOCP discretization)
    g = TorusGrid(2, 32)
    sol = solve_cell(LAM, g, np.array([1.0, 1.0]), SolverParams(tol_gap=1e-5, max_iters=100000))
    assert sol.certified
    assert sol.primal == pytest.approx(2.018821638101, rel=3e-5)


def test_weak_duality_history():
    g = TorusGrid(2, 16)
    sol = solve_cell(LAM, g, np.array([1.0, 1.0]), SolverParams(max_iters=3000, check_every=50))
    assert len(sol.history) >= 10
    for it, primal, dual, gap, div_res, vnorm in sol.history:
        # mean(z).p lower-bounds the primal up to the divergence slack
        # (the raw gap may dip negative while div z is still large)
        assert dual <= primal + div_res * vnorm + 1e-9


def test_homogeneity_of_values():
    g = TorusGrid(2, 32)
    tol = 1e-6
    a = solve_cell(LAM, g, np.array([1.0, 0.25]), SolverParams(tol_gap=tol, max_iters=100000))
    b = solve_cell(LAM, g, np.array([3.0, 0.75]), SolverParams(tol_gap=tol, max_iters=100000))
    assert a.certified and b.certified
    assert abs(b.primal - 3.0 * a.primal) <= 2.0 * tol * b.primal + 1e-12


def test_zero_corrector_upper_bound():
    rng = np.random.default_rng(20)
    g = TorusGrid(2, 16)
    vals = rng.uniform(0.5, 2.0, size=(16, 16))
    m = make_metric(MediumSpec("sampled", "euclidean", {"values": vals}))
    for _ in range(5):
        p = rng.normal(size=2)
        sol = solve_cell(m, g, p, SolverParams(max_iters=4000))
        ub = primal_energy(m, g, p, ScalarField(g, np.zeros((16, 16))))
        assert sol.primal <= ub + 1e-12


def test_translation_equivariance():
    rng = np.random.default_rng(21)
    g = TorusGrid(2, 16)
    vals = rng.uniform(0.5, 2.0, size=(16, 16))
    p = np.array([0.3, 1.1])
    params = SolverParams(max_iters=2000)
    m1 = make_metric(MediumSpec("sampled", "euclidean", {"values": vals}))
    m2 = make_metric(MediumSpec("sampled", "euclidean", {"values": np.roll(vals, (3, 5), axis=(0, 1))}))
    s1 = solve_cell(m1, g, p, params)
    s2 = solve_cell(m2, g, p, params)
    assert s1.primal == pytest.approx(s2.primal, rel=1e-12, abs=1e-12)
    assert s1.dual == pytest.approx(s2.dual, rel=1e-12, abs=1e-12)


def test_corrector_mean_zero_and_feasibility():
    g = TorusGrid(2, 32)
    sol = solve_cell(LAM, g, np.array([2.0, 1.0]), SolverParams(tol_gap=1e-5, max_iters=100000))
    assert sol.certified
    assert abs(np.mean(sol.v.values)) <= 1e-12
    # dual iterate stays pointwise feasible for the polar constraint
    x = g.cell_centers()
    zf = np.moveaxis(sol.z.values, 0, -1)
    assert np.max(LAM.polar_eval(x, zf)) <= 1.0 + 1e-12
    assert sol.div_residual <= SolverParams().feas_tol(g) + 1e-300


def test_uncertified_reported_honestly():
    g = TorusGrid(2, 32)
    sol = solve_cell(LAM, g, np.array([0.0, 1.0]), SolverParams(max_iters=60))
    assert not sol.certified
    assert sol.gap > SolverParams().tol_gap * sol.primal or \
        sol.div_residual > SolverParams().feas_tol(g)


def test_subgradient_estimate():
    g = TorusGrid(2, 32)
    sol = solve_cell(HOM, g, np.array([0.6, 0.8]), SolverParams(tol_gap=1e-8))
    assert np.allclose(subgradient_estimate(sol), [0.6, 0.8], atol=1e-6)
    sol = solve_cell(LAM, g, np.array([1.0, 0.0]), SolverParams(tol_gap=1e-6, max_iters=50000))
    sg = subgradient_estimate(sol)
    # phi is differentiable at e1 with gradient (1.5, 0)
    assert np.allclose(sg, [1.5, 0.0], atol=1e-3)


def test_step_size_guard():
    with pytest.raises(ValueError):
        SolverParams(tau=1.0, sigma=1.0).steps(TorusGrid(2, 32))
    tau, sigma = SolverParams().steps(TorusGrid(2, 32))
    h = 1.0 / 32
    assert tau == pytest.approx(h / (2 * np.sqrt(2)))
    assert sigma == pytest.approx(h / (2 * np.sqrt(2)))
