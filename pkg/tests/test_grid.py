import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulocalrd.grid import (Ball, Field, Grid, Trajectory, cubes_intersecting, cubes_outside,
                           divergence, gradient, integrate, laplacian)


def test_tiling_counts():
    # centres at -1.5..1.5 step 1/2 for a box of length 4
    assert Grid(1, 2.0, 1 / 8).tiling.count == 7
    assert Grid(2, 1.0, 1 / 8).tiling.count == 9


def test_tiling_cubes_inside_box():
    g = Grid(2, 3.0, 1 / 4)
    c = g.tiling.centers
    assert np.all(np.abs(c) <= g.box_half_width - 0.5 + 1e-12)
    assert np.allclose(c * 2, np.round(c * 2))


def test_box_too_small_for_a_cube():
    with pytest.raises(ValueError):
        Grid(1, 0.25, 1 / 8).tiling


@pytest.mark.parametrize("kw", [dict(dim=4, box_half_width=2.0, spacing=0.25),
                                dict(dim=1, box_half_width=2.0, spacing=0.3),
                                dict(dim=1, box_half_width=2.0, spacing=1 / 3),
                                dict(dim=1, box_half_width=2.1, spacing=0.25),
                                dict(dim=1, box_half_width=2.0, spacing=0.25, boundary="neumann")])
def test_invalid_grids(kw):
    with pytest.raises(ValueError):
        Grid(**kw)


def test_grid_roundtrip():
    g = Grid(2, 4.0, 1 / 8, "dirichlet-zero")
    assert Grid.from_dict(g.to_dict()) == g


def test_field_shape_checked():
    g = Grid(1, 2.0, 1 / 4)
    with pytest.raises(ValueError):
        Field(g, np.zeros(3))


def test_cube_integral_of_one_is_one():
    for d in (1, 2, 3):
        g = Grid(d, 1.5, 1 / 4)
        assert np.allclose(g.tiling.cube_integrals(np.ones(g.shape)), 1.0)


def test_cube_integrals_batch_matches_loop():
    g = Grid(2, 2.0, 1 / 4)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(3,) + g.shape)
    batch = g.tiling.cube_integrals(u)
    for i in range(3):
        assert np.allclose(batch[i], g.tiling.cube_integrals(u[i]))


def test_cube_blocks_agree_with_integrals():
    g = Grid(1, 3.0, 1 / 8)
    u = np.cos(g.coords[..., 0])
    blocks = g.tiling.cube_blocks(u)
    w = np.full(g.nodes_per_unit + 1, g.spacing)
    w[[0, -1]] *= 0.5
    assert np.allclose(blocks @ w, g.tiling.cube_integrals(u))


def test_intersecting_and_outside():
    g = Grid(1, 8.0, 1 / 4)
    t = g.tiling
    inside = cubes_intersecting(t, Ball((0.0,), 1.0))
    # cubes centred at |c| <= 1.5 meet the closed ball of radius 1
    assert np.allclose(np.sort(t.centers[inside, 0]), np.arange(-1.5, 1.51, 0.5))
    out = cubes_outside(t, Ball((0.0,), 1.0))
    assert np.all(np.abs(t.centers[out, 0]) > 1.0)
    assert len(out) + np.sum(np.abs(t.centers[:, 0]) <= 1.0) == t.count


def test_gradient_of_periodic_wave():
    g = Grid(1, 4.0, 1 / 32)
    x = g.coords[..., 0]
    k = 2 * np.pi / g.length
    du = gradient(Field(g, np.sin(k * x)))[0]
    assert np.max(np.abs(du - k * np.cos(k * x))) < 1e-3


def test_laplacian_and_divergence():
    g = Grid(2, 2.0, 1 / 16)
    x, y = g.coords[..., 0], g.coords[..., 1]
    k = 2 * np.pi / g.length
    u = np.sin(k * x) * np.cos(2 * k * y)
    exact = -5 * k * k * u
    assert np.max(np.abs(laplacian(u, g) - exact)) < 1e-2 * np.max(np.abs(exact))
    # div grad is the wide-stencil Laplacian
    assert np.max(np.abs(divergence(gradient(u, g), g) - exact)) < 5e-2 * np.max(np.abs(exact))


def test_integrate_constant():
    g = Grid(3, 1.0, 1 / 4)
    assert integrate(np.ones(g.shape), g) == pytest.approx(g.length ** 3)


def test_dirichlet_mask():
    g = Grid(2, 2.0, 1 / 4, "dirichlet-zero")
    m = g.boundary_mask
    assert m[0].all() and m[:, 0].all() and not m[1:, 1:].any()


def test_trajectory_validation_and_window():
    g = Grid(1, 2.0, 1 / 4)
    t = np.linspace(0, 2, 5)
    tr = Trajectory(g, t, np.zeros((5,) + g.shape))
    assert tr.ell == 2.0 and len(tr) == 5
    w = tr.window(0.5, 1.5)
    assert np.allclose(w.times, [0.5, 1.0, 1.5])
    with pytest.raises(ValueError):
        Trajectory(g, [0, 0], np.zeros((2,) + g.shape))
    with pytest.raises(ValueError):
        Trajectory(g, t, np.zeros((4,) + g.shape))


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=50, deadline=None)
def test_field_linearity(a, b):
    g = Grid(1, 2.0, 1 / 4)
    u = Field(g, np.arange(g.size, dtype=float))
    v = a * u + u * b
    assert np.allclose(v.values, (a + b) * u.values)
