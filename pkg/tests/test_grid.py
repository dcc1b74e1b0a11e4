"""Discrete calculus on the torus and box grids: stencils, adjointness,
level sets, and field serialization."""

import numpy as np
import pytest

from stablenorm.grid import (
    BitMask,
    BoxGrid,
    GridError,
    ScalarField,
    TorusGrid,
    VectorField,
    divergence,
    extract_levelset,
    gradient,
    inner,
    load_field_csv,
    save_field_csv,
    save_mask_csv,
)


def test_torus_spike_stencil():
    g = TorusGrid(2, 8)
    u = np.zeros((8, 8))
    u[3, 5] = 1.0
    Du = gradient(ScalarField(g, u))
    # forward difference: +1/h entering the spike, -1/h leaving it
    assert Du.values[0][2, 5] == 8.0
    assert Du.values[0][3, 5] == -8.0
    assert Du.values[1][3, 4] == 8.0
    assert Du.values[1][3, 5] == -8.0
    assert np.count_nonzero(Du.values) == 4


def test_torus_spike_laplacian():
    g = TorusGrid(2, 4)
    u = np.zeros((4, 4))
    u[1, 2] = 1.0
    lap = divergence(gradient(ScalarField(g, u)))
    assert lap.values[1, 2] == -64.0
    for i, j in ((0, 2), (2, 2), (1, 1), (1, 3)):
        assert lap.values[i, j] == 16.0
    assert lap.values.sum() == 0.0


def test_adjointness_torus():
    rng = np.random.default_rng(10)
    g = TorusGrid(2, 12)
    for _ in range(100):
        u = ScalarField(g, rng.normal(size=(12, 12)))
        z = VectorField(g, rng.normal(size=(2, 12, 12)))
        lhs = inner(gradient(u).values, z.values, g)
        rhs = -inner(u.values, divergence(z).values, g)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_adjointness_torus_3d():
    rng = np.random.default_rng(14)
    g = TorusGrid(3, 4)
    for _ in range(20):
        u = ScalarField(g, rng.normal(size=(4, 4, 4)))
        z = VectorField(g, rng.normal(size=(3, 4, 4, 4)))
        lhs = inner(gradient(u).values, z.values, g)
        rhs = -inner(u.values, divergence(z).values, g)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_adjointness_box():
    rng = np.random.default_rng(11)
    g = BoxGrid(10, 2.5)
    for _ in range(100):
        u = ScalarField(g, rng.normal(size=(10, 10)))
        z = VectorField(g, rng.normal(size=(2, 11, 11)))
        lhs = inner(gradient(u).values, z.values, g)
        rhs = -inner(u.values, divergence(z).values, g)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_gradient_shift_equivariance():
    rng = np.random.default_rng(12)
    g = TorusGrid(2, 16)
    u = rng.normal(size=(16, 16))
    Du = gradient(ScalarField(g, u)).values
    for shift in ((1, 0), (0, 3), (5, 7)):
        us = np.roll(u, shift, axis=(0, 1))
        Dus = gradient(ScalarField(g, us)).values
        assert np.array_equal(Dus, np.roll(Du, shift, axis=(1, 2)))


def test_gradient_consistency_smooth():
    # forward differences of a smooth field converge at first order
    errs = []
    for n in (32, 64, 128):
        g = TorusGrid(2, n)
        x = g.cell_centers()
        u = np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
        Du = gradient(ScalarField(g, u)).values
        exact0 = 2 * np.pi * np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
        errs.append(np.max(np.abs(Du[0] - exact0)))
    assert errs[0] / errs[1] > 1.7 and errs[1] / errs[2] > 1.7


def test_box_gradient_wall_charges():
    # u = 1 inside the box: jumps of size 1/h at every wall site, zero inside
    n, L = 6, 3.0
    g = BoxGrid(n, L)
    u = np.ones((n, n))
    Du = gradient(ScalarField(g, u)).values
    h = g.h
    assert Du.shape == (2, n + 1, n + 1)
    # site (i, j) pairs cells (i-1, j-1) and (i, j-1) in component 0, so the
    # transverse index is offset by one; j = 0 sits entirely in the padding.
    assert np.all(Du[0][0, 1:] == 1.0 / h)
    assert np.all(Du[0][n, 1:] == -1.0 / h)
    assert np.all(Du[1][1:, 0] == 1.0 / h)
    assert np.all(Du[1][1:, n] == -1.0 / h)
    assert np.all(Du[0][1:n, :] == 0.0)
    assert np.all(Du[1][:, 1:n] == 0.0)
    assert np.all(Du[0][:, 0] == 0.0)
    assert np.all(Du[1][0, :] == 0.0)


def test_levelset_strict_threshold():
    g = TorusGrid(2, 4)
    u = ScalarField(g, np.arange(16, dtype=float).reshape(4, 4))
    m = extract_levelset(u, 7.0)
    assert m.values.sum() == 8
    assert not m.values.reshape(-1)[7]  # strictly greater than
    assert m.values.reshape(-1)[8]
    m2 = extract_levelset(u, 6.0)
    assert np.all(m2.values >= m.values)  # monotone in the threshold


def test_field_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    g = TorusGrid(2, 8)
    u = ScalarField(g, rng.normal(size=(8, 8)) * np.pi)
    path = tmp_path / "u.csv"
    save_field_csv(path, u)
    u2 = load_field_csv(path)
    assert np.array_equal(u.values, u2.values)  # bit-exact via %.17g
    assert type(u2.grid) is TorusGrid and u2.grid.n == 8

    b = BoxGrid(5, 2.0)
    z = VectorField(b, rng.normal(size=(2, 6, 6)))
    zp = tmp_path / "z.csv"
    save_field_csv(zp, z)
    z2 = load_field_csv(zp)
    assert np.array_equal(z.values, z2.values)
    assert type(z2.grid) is BoxGrid and z2.grid.length == 2.0


def test_mask_csv(tmp_path):
    g = BoxGrid(4, 1.0)
    m = BitMask(g, np.eye(4, dtype=bool))
    p = tmp_path / "m.csv"
    save_mask_csv(p, m)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "i,j"
    assert len(lines) == 5
    assert m.volume() == pytest.approx(4 * 0.25**2)


def test_field_validation():
    g = TorusGrid(2, 4)
    with pytest.raises(GridError):
        ScalarField(g, np.full((4, 4), np.nan))
    with pytest.raises(GridError):
        ScalarField(g, np.zeros((4, 5)))
    with pytest.raises(GridError):
        VectorField(g, np.zeros((2, 4, 5)))
    with pytest.raises(GridError):
        TorusGrid(2, 3)
    with pytest.raises(GridError):
        TorusGrid(1, 8)
    with pytest.raises(GridError):
        BoxGrid(4, -1.0)


def test_grid_geometry():
    g = TorusGrid(2, 8)
    assert g.h == 0.125 and g.cell_volume == 0.125**2
    c = g.cell_centers()
    assert c.shape == (8, 8, 2)
    assert c[0, 0].tolist() == [0.0625, 0.0625]
    b = BoxGrid(4, 2.0)
    assert b.h == 0.5
    s = b.site_centers()
    assert s.shape == (5, 5, 2)
    assert s[0, 0].tolist() == [-0.25, -0.25]
    assert s[4, 4].tolist() == [1.75, 1.75]
