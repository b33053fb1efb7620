import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echogaze.errors import ContractError
from echogaze.metrics import (GazeEvalPoint, angle_from_distances, angular_errors,
                              gaze_angular_error, mgae, mgae_xy)
from echogaze.protocol import ScreenGeometry

G = ScreenGeometry()


def vector_angle(pred, truth, geom=G):
    """Angle between eye->truth and eye->pred rays via atan2 of cross and dot."""
    def ray(p):
        return np.array([(p[0] - geom.width_px / 2) * geom.px_size_cm,
                         (p[1] - geom.height_px / 2) * geom.px_size_cm,
                         geom.eye_distance_cm])
    a, b = ray(truth), ray(pred)
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def test_zero_error():
    assert gaze_angular_error(GazeEvalPoint((100.0, 200.0), (100.0, 200.0))) == 0.0


def test_equilateral():
    assert angle_from_distances(3.0, 3.0, 3.0) == 60.0
    assert angle_from_distances(2.5, 2.5, 2.5) == 60.0


def test_right_triangle():
    dx = 10 / G.px_size_cm
    e = gaze_angular_error(GazeEvalPoint((960 + dx, 540.0), (960.0, 540.0)))
    assert e == pytest.approx(math.degrees(math.atan(10 / 60)), abs=1e-9)
    assert e == pytest.approx(9.462, abs=5e-4)


def test_matches_vector_oracle():
    r = np.random.default_rng(0)
    p = r.uniform([0, 0], [1920, 1080], (2000, 2))
    t = r.uniform([0, 0], [1920, 1080], (2000, 2))
    ours = angular_errors(p, t, G)
    ref = np.array([vector_angle(a, b) for a, b in zip(p, t)])
    assert np.max(np.abs(ours - ref)) < 1e-9


def test_mean_and_order():
    pts = [GazeEvalPoint((0.5, 0.5), (0.5, 0.5)),
           GazeEvalPoint((1900.0, 10.0), (10.0, 1000.0))]
    m = mgae(pts)
    assert m == pytest.approx(gaze_angular_error(pts[1]) / 2)
    assert mgae(pts[::-1]) == m


def test_two_points_mean_30():
    # a 60 degree point: eye distance equals the on-screen offset over tan(60)
    geom = ScreenGeometry(width_px=4000, height_px=4000, px_size_cm=0.01, eye_distance_cm=10.0)
    dx = 10.0 * math.tan(math.radians(60)) / geom.px_size_cm
    pts = [GazeEvalPoint((2000.0, 2000.0), (2000.0, 2000.0), geom),
           GazeEvalPoint((2000.0 + dx, 2000.0), (2000.0, 2000.0), geom)]
    assert mgae(pts) == pytest.approx(30.0, abs=1e-9)


def test_empty():
    with pytest.raises(ContractError):
        mgae([])
    with pytest.raises(ContractError):
        mgae_xy(np.empty((0, 2)), np.empty((0, 2)), G)


def test_truth_off_screen():
    with pytest.raises(ContractError):
        gaze_angular_error(GazeEvalPoint((10.0, 10.0), (2000.0, 10.0)))


def test_prediction_off_screen_is_measured():
    e = gaze_angular_error(GazeEvalPoint((2500.0, 540.0), (960.0, 540.0)))
    assert e == pytest.approx(vector_angle((2500.0, 540.0), (960.0, 540.0)), abs=1e-9)


def test_degenerate_distances():
    with pytest.raises(ContractError):
        angle_from_distances(0.0, 1.0, 1.0)


points = st.tuples(st.floats(0, 1919.999), st.floats(0, 1079.999))


@settings(max_examples=200, deadline=None)
@given(points, points)
def test_symmetric_and_bounded(a, b):
    ab = gaze_angular_error(GazeEvalPoint(a, b))
    ba = gaze_angular_error(GazeEvalPoint(b, a))
    assert ab == pytest.approx(ba, abs=1e-9)
    assert 0.0 <= ab < 60.0
