import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avoidmpc import Polytope
from avoidmpc.exceptions import DimensionError
from avoidmpc.polytope import linear_image, projection_bounds


def test_box_membership_and_support():
    P = Polytope.box([-1, -2], [3, 4])
    assert P.contains([0, 0])
    assert not P.contains([3.1, 0])
    assert P.support([1, 0]) == pytest.approx(3)
    assert P.support([-1, -1]) == pytest.approx(3)
    lo, hi = P.bounding_box()
    np.testing.assert_allclose(lo, [-1, -2])
    np.testing.assert_allclose(hi, [3, 4])


def test_box_vertices():
    V = Polytope.box([0, 0], [1, 2]).vertices()
    expected = {(0, 0), (1, 0), (0, 2), (1, 2)}
    assert {tuple(np.round(v, 9)) for v in V} == expected


def test_unit_square_chebyshev_center():
    c, r = Polytope.box([0, 0], [2, 2]).chebyshev_center()
    np.testing.assert_allclose(c, [1, 1], atol=1e-8)
    assert r == pytest.approx(1.0)


def test_remove_redundant_drops_loose_rows():
    P = Polytope(np.vstack([np.eye(2), -np.eye(2), [[1, 1]]]), [1, 1, 1, 1, 10])
    assert P.remove_redundant().n_constraints == 4


def test_scale_and_empty():
    P = Polytope.box([-1], [1]).scale(0.5)
    assert P.support([1]) == pytest.approx(0.5)
    empty = Polytope([[1.0], [-1.0]], [-1.0, -1.0])
    assert empty.is_empty()


def test_unbounded_support_is_inf():
    P = Polytope([[1.0, 0.0]], [1.0])
    assert P.support([0, 1]) == np.inf
    assert not P.is_bounded()


def test_dimension_error():
    with pytest.raises(DimensionError):
        Polytope(np.eye(2), [1.0])


def test_linear_image_of_square_is_a_diamond():
    img = linear_image(Polytope.box([-1, -1], [1, 1]), [[1, 1], [1, -1]])
    assert img.support([1, 0]) == pytest.approx(2)
    assert img.support([1, 1]) == pytest.approx(2)
    assert img.contains([2, 0], 1e-7) and not img.contains([1.5, 1.5])
    lo, hi = projection_bounds(Polytope.box([-1, -1], [1, 1]), [[2, 0]])
    assert (lo[0], hi[0]) == pytest.approx((-2, 2))


def test_save_load_roundtrip(tmp_path):
    P = Polytope(np.eye(3), [1, 2, 3], [[1, 1, 1]], [0.5])
    P.save(tmp_path / "p.npz")
    Q = Polytope.load(tmp_path / "p.npz")
    np.testing.assert_array_equal(P.H, Q.H)
    np.testing.assert_array_equal(P.e, Q.e)


def test_hit_and_run_samples_stay_inside():
    P = Polytope.box([-1, -1, -1], [1, 2, 3]).intersect(Polytope([[1, 1, 1]], [1.0]))
    pts = P.sample(500, rng=1)
    assert all(P.contains(z, 1e-9) for z in pts)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(0.1, 3), min_size=2, max_size=2),
       st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_box_contains_matches_bounds(lo, width, z):
    lo = np.array(lo)
    hi = lo + np.array(width)
    z = np.array(z)
    inside = bool(np.all(z >= lo - 1e-9) and np.all(z <= hi + 1e-9))
    assert Polytope.box(lo, hi).contains(z) == inside
