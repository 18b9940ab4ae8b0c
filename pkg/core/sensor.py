# core/sensor.py

"""
Simulated structured-light sensor.

Measurements are produced by the same render -> pattern -> uncertainty
pipeline the planner uses for prediction, evaluated at the true object pose,
then corrupted with depth noise of the predicted magnitude and with
along-ray outliers.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .render import predict_depth_map, trace_paths
from .refine import build_measurement_set
from .uncertainty import DEFAULT_PATCH, DepthMap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Acquisition:
    """One captured view: depth map, ground-truth target mask and camera pose."""

    depth: DepthMap
    mask: np.ndarray
    T_wc: object
    view_id: int


def acquire(scene, T_wc, settings, response, rng, view_id=0, noise=True, outlier_fraction=0.0,
            outlier_range=30.0):
    """
    Capture the target object from T_wc.

    Valid pixels get N(0, sigma_z^2) depth noise; a fraction of them is
    replaced by outliers shifted along the ray by up to +-outlier_range mm.
    """
    truth = scene.target_object.pose
    predicted = predict_depth_map(scene, truth, T_wc, settings, response)
    depth = np.array(predicted.depth, dtype=float)
    rows, cols = np.nonzero(predicted.valid)
    if noise and rows.size:
        depth[rows, cols] += rng.normal(0.0, np.sqrt(predicted.variance[rows, cols]))
    if outlier_fraction > 0 and rows.size:
        count = int(round(outlier_fraction * rows.size))
        chosen = rng.choice(rows.size, size=count, replace=False)
        shift = rng.uniform(-outlier_range, outlier_range, size=count)
        depth[rows[chosen], cols[chosen]] += shift
    valid = predicted.valid & (depth > 0)
    measured = DepthMap(np.where(valid, depth, 0.0), np.where(valid, predicted.variance, np.inf), valid,
                        predicted.low_visibility, dict(predicted.info))
    mask = trace_paths(scene.with_camera_pose(T_wc), 1, shadows=False).object_ids == scene.target
    return Acquisition(measured, mask, T_wc, view_id)


class SimulatorSource:
    """Acquires measurement sets from a simulated scene whose target sits at its true pose."""

    def __init__(self, scene, settings, response, seed=0, noise=True, outlier_fraction=0.0, stride=1):
        self.scene = scene
        self.settings = settings
        self.response = response
        self.rng = np.random.default_rng(seed)
        self.noise = noise
        self.outlier_fraction = outlier_fraction
        self.stride = stride

    @property
    def truth(self):
        """True T_ow of the target."""
        return self.scene.target_object.pose.inverse()

    def acquire(self, view_id, T_wc):
        shot = acquire(self.scene, T_wc, self.settings, self.response, self.rng, view_id,
                       self.noise, self.outlier_fraction)
        return build_measurement_set(shot.depth, shot.mask, self.scene.camera, T_wc, view_id, self.stride)


def _bilinear(image, ys, xs):
    return map_coordinates(image, [ys.ravel(), xs.ravel()], order=1, mode='nearest').reshape(xs.shape)


def match_subpixel_disparity(left, right, pixels, initial, patch=DEFAULT_PATCH, iterations=10):
    """
    Refine disparities by Gauss-Newton on the patch SSD.

    For each left pixel (x, y) in `pixels` ((N, 2) array), minimizes
    sum (I_R(x - d) - I_L(x))^2 over the patch, starting from `initial`.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    half = patch // 2
    dy, dx = np.mgrid[-half:half + 1, -half:half + 1]
    xs = pixels[:, 0, None] + dx.ravel()[None, :]
    ys = pixels[:, 1, None] + dy.ravel()[None, :]
    reference = _bilinear(left.values, ys, xs)
    d = np.array(initial, dtype=float).reshape(-1).copy()
    for _ in range(iterations):
        shifted = xs - d[:, None]
        residual = _bilinear(right.values, ys, shifted) - reference
        g = 0.5 * (_bilinear(right.values, ys, shifted + 1.0) - _bilinear(right.values, ys, shifted - 1.0))
        energy = np.sum(g * g, axis=1)
        step = np.where(energy > 1e-12, np.sum(g * residual, axis=1) / np.maximum(energy, 1e-12), 0.0)
        d += step
        if np.max(np.abs(step), initial=0.0) < 1e-6:
            break
    return d
