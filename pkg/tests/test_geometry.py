import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_homography
from rest_mot.geometry import (
    CalibrationError,
    Homography,
    OrderingError,
    ProjectionError,
    appearance_distances,
    cosine_distance,
    edge_distances,
    foot_point,
    pair_norms,
    project_foot_point,
    project_foot_points,
    speed,
)
from rest_mot.graph import Node

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_identity_homography_maps_foot_point():
    H = Homography(np.eye(3))
    np.testing.assert_allclose(project_foot_point((10.0, 20.0, 4.0, 8.0), H), [12.0, 28.0])


def test_foot_point_is_bottom_centre():
    np.testing.assert_array_equal(foot_point((1.0, 2.0, 3.0, 4.0)), [2.5, 6.0])


def test_known_scaling_homography():
    # image = 2 * ground + (5, 7)
    H = Homography(np.array([[2.0, 0, 5], [0, 2.0, 7], [0, 0, 1]]))
    np.testing.assert_allclose(H.to_ground(np.array([9.0, 13.0])), [2.0, 3.0])
    np.testing.assert_allclose(H.to_image(np.array([2.0, 3.0])), [9.0, 13.0])


def test_flat_nine_values_accepted():
    assert Homography(np.arange(9.0) + np.eye(3).ravel() * 10).h.shape == (3, 3)


@pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.ones((3, 3)), np.full((3, 3), np.nan), np.eye(2)])
def test_singular_or_malformed_rejected(bad):
    with pytest.raises(CalibrationError):
        Homography(bad)


def test_point_at_infinity_raises():
    # the inverse is a permutation whose third row sends image x = 0 to w = 0
    H = Homography(np.linalg.inv(np.array([[0.0, 1, 0], [0, 0, 1], [1, 0, 0]])))
    with pytest.raises(ProjectionError):
        H.to_ground(np.array([0.0, 5.0]))


def test_non_positive_box_rejected():
    with pytest.raises(ValueError):
        project_foot_point((0.0, 0.0, 0.0, 3.0), Homography(np.eye(3)))


def test_vectorised_projection_matches_scalar(rng):
    H = Homography(random_homography(rng))
    boxes = np.column_stack([rng.uniform(0, 50, 20), rng.uniform(0, 50, 20), rng.uniform(1, 5, 20), rng.uniform(1, 9, 20)])
    many = project_foot_points(boxes, H)
    for b, p in zip(boxes, many):
        np.testing.assert_allclose(project_foot_point(b, H), p, rtol=1e-12, atol=1e-12)


def test_speed_is_displacement_per_frame():
    np.testing.assert_allclose(speed(np.array([4.0, 2.0]), 5, np.array([0.0, 0.0]), 3), [2.0, 1.0])


@pytest.mark.parametrize("ti,tj", [(3, 3), (2, 5)])
def test_speed_ordering(ti, tj):
    with pytest.raises(OrderingError):
        speed(np.zeros(2), ti, np.zeros(2), tj)


def test_cosine_distance_degenerate():
    assert cosine_distance(np.zeros(4), np.ones(4)) == (1.0, True)
    d, degenerate = cosine_distance(np.array([1.0, 0]), np.array([0.0, 2.0]))
    assert d == pytest.approx(1.0) and not degenerate


def test_appearance_distances_zero_vector_row():
    out = appearance_distances(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_allclose(out, [[1.0, 1.0], [2.0, 0.0]], atol=1e-15)


@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_pair_norms_match_numpy(a, b):
    d = np.subtract(a, b)
    l1, l2 = pair_norms(d)[0]
    assert l1 == pytest.approx(np.linalg.norm(d, 1))
    assert l2 == pytest.approx(np.linalg.norm(d))
    assert l2 <= l1 + 1e-9


@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8), st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_cosine_distance_range_and_symmetry(a, b):
    a, b = np.array(a), np.array(b)
    d1, _ = cosine_distance(a, b)
    d2, _ = cosine_distance(b, a)
    assert -1e-12 <= d1 <= 2 + 1e-12
    assert d1 == pytest.approx(d2)


def _node(app, pos, spd=None):
    return Node(0, [0], 0, [(0, (0, 0, 1, 1))], np.asarray(app, float), np.asarray(pos, float),
                None if spd is None else np.asarray(spd, float))


def test_edge_distances_speed_only_when_both_present():
    a, b = _node([1, 0], [0, 0], [1, 1]), _node([0, 1], [3, 4])
    dd, dp, ds = edge_distances(a, b)
    np.testing.assert_allclose(dp, [7.0, 5.0])
    np.testing.assert_allclose(dd, [2.0, 1.0])
    assert ds is None
    b.speed = np.array([1.0, -1.0])
    _, _, ds = edge_distances(a, b)
    np.testing.assert_allclose(ds, [2.0, 2.0])


def test_edge_distances_dimension_mismatch():
    with pytest.raises(ValueError):
        edge_distances(_node([1, 0, 0], [0, 0]), _node([1, 0], [0, 0]))
