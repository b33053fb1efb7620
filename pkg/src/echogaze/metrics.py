"""Gaze angular error and mean gaze angular error (MGAE).

The eye sits on the perpendicular through the screen centre at
``geom.eye_distance_cm``; the angle at the eye between the rays to the true
and predicted points follows from the law of cosines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .protocol import ScreenGeometry, px_to_cm


@dataclass(frozen=True)
class GazeEvalPoint:
    pred: tuple[float, float]
    truth: tuple[float, float]
    geom: ScreenGeometry = ScreenGeometry()


def angle_from_distances(d_eg, d_ep, d_gp):
    """Angle (degrees) opposite ``d_gp`` in the eye/truth/prediction triangle."""
    d_eg = np.asarray(d_eg, dtype=np.float64)
    d_ep = np.asarray(d_ep, dtype=np.float64)
    if np.any(d_eg <= 0) or np.any(d_ep <= 0):
        raise ContractError("eye-to-point distances must be positive")
    cos = (d_eg**2 + d_ep**2 - np.asarray(d_gp, dtype=np.float64) ** 2) / (2 * d_eg * d_ep)
    # extended precision before rounding back, so exact cosines give exact angles
    rad = np.arccos(np.clip(cos, -1.0, 1.0).astype(np.longdouble))
    return (rad * (180 / np.arccos(np.longdouble(-1)))).astype(np.float64)


def _plane_3d(geom: ScreenGeometry, p, check: bool) -> np.ndarray:
    if check:
        xy = px_to_cm(geom, p)
    else:
        p = np.asarray(p, dtype=np.float64)
        xy = (p - np.asarray(geom.center_px)) * geom.px_size_cm
    return np.concatenate([xy, np.zeros(xy.shape[:-1] + (1,))], axis=-1)


def angular_errors(pred, truth, geom: ScreenGeometry) -> np.ndarray:
    """Vectorised gaze angular error for (n, 2) pixel arrays.

    Ground truth must lie on screen. Predictions may overshoot the edges;
    they are measured where they fall on the screen plane.
    """
    eye = np.array([0.0, 0.0, -geom.eye_distance_cm])
    g = _plane_3d(geom, truth, check=True)
    p = _plane_3d(geom, pred, check=False)
    d_eg = np.linalg.norm(g - eye, axis=-1)
    d_ep = np.linalg.norm(p - eye, axis=-1)
    d_gp = np.linalg.norm(g - p, axis=-1)
    return angle_from_distances(d_eg, d_ep, d_gp)


def gaze_angular_error(point: GazeEvalPoint) -> float:
    return float(angular_errors(np.asarray([point.pred]), np.asarray([point.truth]),
                                point.geom)[0])


def mgae(points) -> float:
    """Mean of :func:`gaze_angular_error` over a non-empty list of points."""
    points = list(points)
    if not points:
        raise ContractError("MGAE of an empty set is undefined")
    return float(np.mean([gaze_angular_error(p) for p in points]))


def mgae_xy(pred, truth, geom: ScreenGeometry) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.size == 0:
        raise ContractError("MGAE of an empty set is undefined")
    return float(np.mean(angular_errors(pred, truth, geom)))
