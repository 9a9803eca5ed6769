import math

import numpy as np
import pytest

from ulocalrd.dynamics import (absorbing_radius, endpoint, envelope_violation, estimate_contraction,
                               estimate_dissipation, estimate_smoothing, sample_attractor,
                               scaled_initial_data, semigroup_apply, solution_pairs, time_difference,
                               trajectory_map, weighted_l2_squares)
from ulocalrd.grid import Grid, Trajectory
from ulocalrd.pde import SolverConfig, make_problem, solve
from ulocalrd.random_fields import random_field
from ulocalrd.weights import constant_weight, make_exponential_weight

G = Grid(1, 8.0, 1 / 8)
PS = make_problem()


def test_semigroup_identity_and_composition():
    u0 = random_field(G, np.random.default_rng(0))
    cfg = SolverConfig(dt=1e-2)
    assert np.array_equal(semigroup_apply(u0, 0.0, PS, cfg).values, u0.values)
    two = semigroup_apply(semigroup_apply(u0, 0.3, PS, cfg), 0.2, PS, cfg)
    assert np.allclose(semigroup_apply(u0, 0.5, PS, cfg).values, two.values, atol=1e-12)
    with pytest.raises(ValueError):
        semigroup_apply(u0, -1.0, PS, cfg)


def test_trajectory_map_shifts_window():
    u0 = random_field(G, np.random.default_rng(1))
    cfg = SolverConfig(dt=1e-2, T=1.0, record_every=10)
    chi = solve(u0, PS, cfg)
    assert trajectory_map(chi, 0.0, PS, cfg) is chi
    moved = trajectory_map(chi, 0.5, PS, cfg)
    assert moved.ell == pytest.approx(chi.ell)
    assert moved.times[0] == pytest.approx(0.5)
    assert np.allclose(endpoint(moved).values, semigroup_apply(endpoint(chi), 0.5, PS, cfg).values,
                       atol=1e-12)
    with pytest.raises(ValueError):
        trajectory_map(chi, 0.05, PS, cfg)


def test_scaled_initial_data_hits_targets():
    fields = scaled_initial_data(G, [0.5, 2.0, 8.0], seed=3)
    norms = [math.sqrt(weighted_l2_squares(f.values, G, constant_weight())) for f in fields]
    assert norms == pytest.approx([0.5, 2.0, 8.0])


def test_envelope_and_radius():
    t = np.array([0.0, 1.0, 2.0])
    n = np.array([[4.0, 4 * math.exp(-1) + 1, 4 * math.exp(-2) + 1]])
    assert envelope_violation(t, n, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert envelope_violation(t, n, 1.0, 0.5) == pytest.approx(0.5)
    assert absorbing_radius(1.0, 1.0) == pytest.approx(1.1 / math.sqrt(1 - math.exp(-1)))


def test_dissipation_fit_is_feasible():
    w = make_exponential_weight([0.0], -0.5)
    inits = scaled_initial_data(G, [0.5, 3.0, 6.0], seed=2)
    fit = estimate_dissipation(inits, PS, SolverConfig(dt=2e-3, T=8.0, record_every=50), w)
    assert fit.sigma > 0 and fit.c3 > 0 and fit.worst_violation <= 0
    assert np.all(np.diff(fit.c3_curve) >= -1e-12)  # smallest feasible c3 grows with sigma
    assert fit.w12_window_sup > 0 and fit.lp_window_sup > 0
    with pytest.raises(ValueError):
        estimate_dissipation(inits, PS, SolverConfig(dt=2e-3), make_exponential_weight([0.0], -1.0))


def test_contraction_starts_at_one_and_rejects_identical_pairs():
    rng = np.random.default_rng(4)
    pairs = [(random_field(G, rng), random_field(G, rng)) for _ in range(2)]
    rep = estimate_contraction(pairs, PS, SolverConfig(dt=2e-3, record_every=25), 0.5, margin=2.0)
    assert rep.c2[0] == pytest.approx(1.0)
    assert np.all(np.diff(rep.c2) >= -1e-12) and np.isfinite(rep.at(0.5))
    same = random_field(G, rng)
    with pytest.raises(ValueError):
        estimate_contraction([(same, same)], PS, SolverConfig(dt=2e-3), 0.5)


def test_smoothing_constants():
    rng = np.random.default_rng(5)
    pairs = [(random_field(G, rng), random_field(G, rng)) for _ in range(2)]
    sp = solution_pairs(pairs, PS, SolverConfig(dt=2e-3, record_every=25))
    rep = estimate_smoothing(sp, constant_weight())
    assert 0 < rep.K1 < np.inf and 0 < rep.K2 < np.inf and len(rep.rows) == 2
    with pytest.raises(ValueError):
        estimate_smoothing([(sp[0][0], sp[0][0])], constant_weight())


def test_time_difference_of_linear_motion():
    t = np.linspace(0, 1, 5)
    v = np.sin(G.coords[..., 0])
    tr = Trajectory(G, t, t[:, None] * v[None])
    d = time_difference(tr)
    assert np.allclose(d.values, v) and np.allclose(d.times, t[1:])


def test_attractor_sample_is_bounded_and_reproducible():
    g = Grid(1, 6.0, 1 / 4)
    cfg = SolverConfig(dt=4e-3, record_every=50)
    a = sample_attractor(g, PS, cfg, 6, radius=3.0, burn_in=2.0, seed=1, batch=4)
    b = sample_attractor(g, PS, cfg, 6, radius=3.0, burn_in=2.0, seed=1)
    assert len(a.trajectories) == 6 and not a.dropped
    assert a.trajectories[0].times[0] == pytest.approx(2.0) and a.trajectories[0].ell == pytest.approx(1.0)
    assert all(np.allclose(x.values, y.values) for x, y in zip(a.trajectories, b.trajectories))
    assert a.max_l2b < 3.0
    assert "lower bound" in a.to_dict()["note"]
