import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulocalrd.grid import Grid
from ulocalrd.weights import (check_admissibility, constant_weight, custom_weight,
                              make_exponential_weight, make_localized_weight, pointwise_max,
                              pointwise_min, weight_from_dict)

GRID1 = Grid(1, 8.0, 1 / 16)
GRID2 = Grid(2, 4.0, 1 / 8)


def test_exponential_values():
    w = make_exponential_weight([0.0], -0.5)
    assert w([[0.0]])[0] == 1.0
    assert w([[2.0]])[0] == pytest.approx(math.exp(-1))
    assert w([[-2.0]])[0] == pytest.approx(0.36787944117144233)
    assert w.mu == 0.5 and w.growth_constant == 1.0


def test_zero_rate_is_exactly_one():
    w = make_exponential_weight([1.0, -2.0], 0.0)
    x = np.random.default_rng(0).normal(size=(50, 2)) * 10
    assert np.all(w(x) == 1.0)


@pytest.mark.parametrize("m", [-1.5, 0.2])
def test_exponential_rejects_bad_rate(m):
    with pytest.raises(ValueError):
        make_exponential_weight([0.0], m)


def test_localized_values():
    R = 2.0
    w = make_localized_weight([0.0], R)
    assert w([[0.0]])[0] == 1.0
    assert w([[R + 1.0]])[0] == 1.0  # seam, sqrt(1) = 1
    assert w([[R + 1.0 + 2.0]])[0] == pytest.approx(math.exp(-1))
    w2 = make_localized_weight([0.0, 0.0], 1.0)
    r = 1 + math.sqrt(2) + 2
    assert w2([[r, 0.0]])[0] == pytest.approx(math.exp(-1))
    assert w.mu == 0.5


def test_localized_rejects_small_R():
    with pytest.raises(ValueError):
        make_localized_weight([0.0], 0.5)


@pytest.mark.parametrize("grid", [GRID1, GRID2])
@pytest.mark.parametrize("w", [constant_weight(), make_exponential_weight([0.0], -0.5),
                               make_exponential_weight([0.0], -1.0), make_localized_weight([0.0], 1.0)])
def test_admissible_families_pass(grid, w):
    if w.kind != "constant":
        w = weight_from_dict(dict(w.to_dict(), **({"center": [0.0] * grid.dim} if w.kind == "exponential"
                                                   else {"x0": [0.0] * grid.dim})))
    rep = check_admissibility(w, grid)
    assert rep.passed, rep
    assert rep.seed == 20240101


def test_inadmissible_gradient_detected():
    w = custom_weight(lambda x: np.exp(-2 * np.linalg.norm(x, axis=-1)), mu=2.0)
    rep = check_admissibility(w, GRID1)
    # |grad phi| = 2 phi away from the origin
    assert rep.max_gradient_violation == pytest.approx(1.0, abs=0.05)
    assert not rep.passed


def test_understated_growth_rate_detected():
    w = custom_weight(lambda x: np.exp(-0.5 * np.linalg.norm(x, axis=-1)), mu=0.1)
    assert check_admissibility(w, GRID1).max_ratio_violation > 0


def test_composites():
    a = make_exponential_weight([0.0], -0.25)
    b = make_localized_weight([1.0], 2.0)
    for c in (pointwise_min(a, b), pointwise_max(a, b)):
        assert c.mu == 0.5
        assert check_admissibility(c, GRID1).passed
    x = np.linspace(-8, 8, 33)[:, None]
    assert np.allclose(pointwise_min(a, b)(x), np.minimum(a(x), b(x)))
    assert np.allclose(pointwise_max(a, b)(x), np.maximum(a(x), b(x)))


def test_dict_roundtrip():
    w = pointwise_min(make_exponential_weight([0.5], -0.5), make_localized_weight([0.0], 3.0))
    w2 = weight_from_dict(w.to_dict())
    x = np.linspace(-8, 8, 41)[:, None]
    assert np.allclose(w(x), w2(x))


@given(st.floats(-1.0, 0.0), st.floats(-4, 4), st.floats(-4, 4))
@settings(max_examples=100, deadline=None)
def test_exponential_growth_bound(m, x, y):
    w = make_exponential_weight([0.0], m)
    ratio = w([[x]])[0] / w([[y]])[0]
    assert ratio <= math.exp(w.mu * abs(x - y)) * (1 + 1e-12)
    assert w([[x]])[0] > 0
