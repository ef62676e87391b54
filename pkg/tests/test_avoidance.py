import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from avoidmpc import (AvoidanceSpec, EllipsoidUnionComplement, HalfspaceIntersection, Polytope,
                      Sphere, avoidance_cost, penalty_gradient, penalty_value)
from avoidmpc.avoidance import estimate_bound_S, region_from_dict
from avoidmpc.exceptions import DimensionError, UnsupportedExponent

E1 = [[16.0, 0.0], [0.0, 0.5]]
E2 = [[5.8551, 7.3707], [7.3707, 10.6449]]
PLATE = EllipsoidUnionComplement((E1, E2), ([0, 0], [0, 0]), (0.15, 0.15))


def _fd(f, y, h=1e-6):
    g = np.zeros(y.size)
    for i in range(y.size):
        e = np.zeros(y.size)
        e[i] = h
        g[i] = (f(y + e) - f(y - e)) / (2 * h)
    return g


def test_sphere_values():
    s = Sphere([0.0, 0.0], 2.0)
    assert penalty_value(s, [0.0, 0.0]) == pytest.approx(16.0)
    assert penalty_value(s, [1.0, 1.0]) == pytest.approx(4.0)
    assert penalty_value(s, [2.0, 0.0]) == 0.0
    assert penalty_value(s, [3.0, 0.0]) == 0.0
    np.testing.assert_allclose(penalty_gradient(s, [1.0, 0.0]), [-12.0, 0.0])


def test_sphere_enclosure_factor():
    s = Sphere([0.0], 1.0, sigma=1.5)
    assert penalty_value(s, [1.2]) > 0
    with pytest.raises(ValueError):
        Sphere([0.0], 1.0, sigma=0.9)


def test_sphere_on_selected_outputs():
    s = Sphere([1.0, 2.0], 1.0, output_index=(0, 2))
    y = np.array([1.5, 100.0, 2.0, -7.0])
    assert penalty_value(s, y) == pytest.approx((1 - 0.25) ** 2)
    g = penalty_gradient(s, y)
    assert g[1] == 0 and g[3] == 0 and g[0] != 0


def test_plate_penalty_zero_on_plate_and_positive_off():
    assert penalty_value(PLATE, [0.0, 0.0]) == 0.0
    assert penalty_value(PLATE, [0.0, -1.2]) == 0.0
    assert penalty_value(PLATE, [1.5, 1.5]) > 0.0
    g = PLATE.g_values([1.0, -0.25])
    expected = [16.0 - 0.85 + 0.5 * 0.0625, 5.8551 - 2 * 7.3707 * 0.25 + 10.6449 * 0.0625 - 0.85]
    np.testing.assert_allclose(g, expected)
    assert penalty_value(PLATE, [1.0, -0.25]) == pytest.approx((g[0] * g[1]) ** 2)


def test_halfspace_square():
    sq = HalfspaceIntersection([[1, 0], [-1, 0], [0, 1], [0, -1]], [1, 1, 1, 1])
    assert penalty_value(sq, [0.0, 0.0]) == pytest.approx(1.0)
    assert penalty_value(sq, [1.0, 0.0]) == 0.0
    assert penalty_value(sq, [2.0, 0.0]) == 0.0
    big = HalfspaceIntersection([[1, 0], [-1, 0], [0, 1], [0, -1]], [1, 1, 1, 1], sigma=2.0)
    assert penalty_value(big, [1.5, 0.0]) > 0.0


def test_only_quadratic_exponent_has_gradients():
    s = Sphere([0.0], 1.0)
    assert penalty_value(s, [0.5], epsilon=1) == pytest.approx(0.75)
    with pytest.raises(UnsupportedExponent):
        penalty_gradient(s, [0.5], epsilon=1)


def test_spec_broadcast_and_validation():
    spec = AvoidanceSpec([Sphere([0.0], 1.0), Sphere([3.0], 1.0)], [5.0])
    assert spec.mu == (5.0, 5.0)
    with pytest.raises(DimensionError):
        AvoidanceSpec([Sphere([0.0], 1.0)], [1.0, 2.0])
    with pytest.raises(ValueError):
        AvoidanceSpec([Sphere([0.0], 1.0)], [0.0])


def test_avoidance_cost_sums_horizon_and_artificial_output():
    spec = AvoidanceSpec([Sphere([0.0], 1.0)], [2.0])
    y_seq = np.array([[0.0], [0.5], [3.0]])
    expected = 2.0 * (1.0 + 0.75 ** 2 + 0.0 + 1.0)
    assert avoidance_cost(spec, y_seq, np.array([0.0])) == pytest.approx(expected)
    assert avoidance_cost(AvoidanceSpec(), y_seq, np.zeros(1)) == 0.0


def test_region_dict_roundtrip():
    for reg in (Sphere([1.0, 2.0], 0.5, 1.2, (0, 1)), PLATE,
                HalfspaceIntersection([[1.0, 0.0]], [2.0], [0.0, 0.0], 1.1)):
        back = region_from_dict(reg.to_dict())
        y = np.array([0.3, -0.4])
        assert penalty_value(back, y) == pytest.approx(penalty_value(reg, y))


def test_bound_estimate_dominates_observed_cost():
    spec = AvoidanceSpec([Sphere([0.0, 0.0], 1.0)], [3.0])
    Y = Polytope.box([-2, -2], [2, 2])
    S = estimate_bound_S(spec, Y, horizon=4)
    rng = np.random.default_rng(0)
    for _ in range(200):
        ys = rng.uniform(-2, 2, (5, 2))
        assert avoidance_cost(spec, ys, rng.uniform(-2, 2, 2)) <= S


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_plate_gradient_matches_finite_differences(a, b):
    y = np.array([a, b])
    g = PLATE.g_values(y)
    assume(np.all(np.abs(g) > 1e-3))
    num = _fd(lambda z: penalty_value(PLATE, z), y)
    ana = penalty_gradient(PLATE, y)
    assert np.linalg.norm(ana - num) <= 1e-5 * max(1.0, np.linalg.norm(ana))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_sphere_gradient_matches_finite_differences(y):
    y = np.array(y)
    s = Sphere([0.5, -0.5, 0.0], 2.0, 1.25)
    assume(abs(s.effective_radius ** 2 - np.sum((y - s.center) ** 2)) > 1e-3)
    num = _fd(lambda z: penalty_value(s, z), y)
    ana = penalty_gradient(s, y)
    assert np.linalg.norm(ana - num) <= 1e-5 * max(1.0, np.linalg.norm(ana))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_penalty_is_nonnegative(y):
    for reg in (PLATE, Sphere([0.0, 0.0], 1.0)):
        assert penalty_value(reg, y) >= 0.0
