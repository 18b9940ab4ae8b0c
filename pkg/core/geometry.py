# core/geometry.py

"""
SE(3)/se(3) algebra, the pinhole camera model and frame bookkeeping.

Conventions used across the whole package:

* millimetres and radians everywhere; degrees only appear at the CLI boundary;
* twists are 6-vectors laid out as [v; omega] (translation first);
* pose updates are left-multiplicative, T <- exp(delta) @ T;
* camera frames follow the pinhole convention x right, y down, z forward.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import polar

from .exceptions import ContractViolationError, InvalidMeasurementError

logger = logging.getLogger(__name__)

# Number of compositions after which a pose is projected back onto SO(3).
REORTHONORMALIZE_EVERY = 50

_SMALL_ANGLE = 1e-8


def hat(w):
    """Skew-symmetric matrix [w]x such that hat(w) @ p == cross(w, p)."""
    wx, wy, wz = np.asarray(w, dtype=float)
    return np.array([[0.0, -wz, wy],
                     [wz, 0.0, -wx],
                     [-wy, wx, 0.0]])


def vee(S):
    """Inverse of hat()."""
    S = np.asarray(S, dtype=float)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def _frozen(array, shape):
    array = np.array(array, dtype=float).reshape(shape)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Pose:
    """
    Rigid transform p' = R p + t.

    Instances are immutable and can be shared across worker threads. The
    `compositions` counter tracks how many products produced this rotation so
    drift can be bounded by a polar re-orthonormalization.
    """

    rotation: np.ndarray
    translation: np.ndarray
    compositions: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, 'translation', _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise ContractViolationError(f"Expected a 4x4 matrix, got shape {matrix.shape}.")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_xyz_axis_angle(cls, xyz, axis_angle):
        """Build a pose from a translation and a rotation vector (radians)."""
        return cls(exp_map(np.concatenate([np.zeros(3), np.asarray(axis_angle, dtype=float)])).rotation,
                   np.asarray(xyz, dtype=float))

    def as_matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def axis_angle(self):
        return log_map(Pose(self.rotation, np.zeros(3)))[3:]

    def compose(self, other):
        """Return self @ other (apply `other` first)."""
        rotation = self.rotation @ other.rotation
        translation = self.rotation @ other.translation + self.translation
        count = max(self.compositions, other.compositions) + 1
        if count >= REORTHONORMALIZE_EVERY:
            rotation, _ = polar(rotation)
            count = 0
        return Pose(rotation, translation, count)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        rotation_t = self.rotation.T
        return Pose(rotation_t, -rotation_t @ self.translation, self.compositions)

    def apply(self, points):
        """Transform a single 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return (np.all(np.abs(R.T @ R - np.eye(3)) <= tol)
                and abs(np.linalg.det(R) - 1.0) <= tol)


def exp_map(xi):
    """
    Closed-form SE(3) exponential of a twist [v; omega].

    Uses Rodrigues' formula, with the Taylor series when ||omega|| < 1e-8.
    """
    xi = np.asarray(xi, dtype=float).reshape(6)
    v, w = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    W = hat(w)
    W2 = W @ W
    if theta < _SMALL_ANGLE:
        R = np.eye(3) + W + 0.5 * W2
        V = np.eye(3) + 0.5 * W + W2 / 6.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta ** 2
        c = (theta - math.sin(theta)) / theta ** 3
        R = np.eye(3) + a * W + b * W2
        V = np.eye(3) + b * W + c * W2
    return Pose(R, V @ v)


def _rotation_log(R):
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = math.acos(cos_theta)
    skew = vee(R - R.T)
    if theta < _SMALL_ANGLE:
        return 0.5 * skew
    if math.pi - theta < 1e-6:
        # Near pi, sin(theta) vanishes; read the axis from the symmetric part.
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, skew) < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * math.sin(theta)) * skew


def log_map(T):
    """Principal logarithm of a pose, returned as a twist [v; omega] with ||omega|| in [0, pi]."""
    w = _rotation_log(T.rotation)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < _SMALL_ANGLE:
        V_inv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta ** 2
        V_inv = np.eye(3) - 0.5 * W + (1.0 - a / (2.0 * b)) / theta ** 2 * (W @ W)
    return np.concatenate([V_inv @ T.translation, w])


def transform_cloud(points, T):
    """Apply R p + t to every point, preserving order."""
    return T.apply(np.asarray(points, dtype=float).reshape(-1, 3))


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """
    Camera-to-world pose T_wc for a camera at `eye` looking at `target`.

    The camera z axis points at the target and the image y axis points away
    from `up` (pinhole convention, y down).
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    if abs(np.dot(forward, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(np.column_stack([right, down, forward]), eye)


@dataclass(frozen=True)
class CameraModel:
    """Rectified pinhole stereo camera; the left eye defines the camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    baseline: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise ContractViolationError("Focal lengths and baseline must be positive.")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractViolationError("Principal point must lie inside the image.")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def focal_baseline(self):
        return self.fx * self.baseline

    def contains(self, u):
        u = np.asarray(u, dtype=float)
        return bool(0 <= u[0] <= self.width - 1 and 0 <= u[1] <= self.height - 1)

    def bearings(self, us, vs):
        """Unnormalized rays K^-1 [u, v, 1] for arrays of pixel coordinates."""
        us = np.asarray(us, dtype=float)
        vs = np.asarray(vs, dtype=float)
        return np.stack([(us - self.cx) / self.fx, (vs - self.cy) / self.fy, np.ones_like(us)], axis=-1)

    def pixel_grid(self):
        vs, us = np.mgrid[0:self.height, 0:self.width]
        return us.astype(float), vs.astype(float)

    def disparity_from_depth(self, z):
        return self.focal_baseline / np.asarray(z, dtype=float)

    def depth_from_disparity(self, d):
        return self.focal_baseline / np.asarray(d, dtype=float)

    def right_eye(self, T_wc):
        """World pose of the right camera, offset by the baseline along the left camera x axis."""
        return T_wc @ Pose(np.eye(3), np.array([self.baseline, 0.0, 0.0]))

    def to_dict(self):
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height, 'baseline': self.baseline}


def backproject(u, z, cam):
    """Return z * K^-1 [u, 1] in the camera frame (mm)."""
    if not np.isfinite(z) or z <= 0:
        raise InvalidMeasurementError(f"Depth must be positive and finite, got {z}.")
    if not cam.contains(u):
        raise InvalidMeasurementError(f"Pixel {tuple(u)} lies outside the {cam.width}x{cam.height} image.")
    return z * cam.bearings(u[0], u[1])


def backproject_pixels(us, vs, zs, cam):
    """Vectorized backproject() for arrays of valid pixels; returns (N, 3)."""
    zs = np.asarray(zs, dtype=float)
    if np.any(~np.isfinite(zs)) or np.any(zs <= 0):
        raise InvalidMeasurementError("Depths must be positive and finite.")
    return zs[:, None] * cam.bearings(us, vs)


def project(p, cam):
    """Pixel coordinates of camera-frame points (the inverse of backproject)."""
    p = np.asarray(p, dtype=float)
    u = cam.fx * p[..., 0] / p[..., 2] + cam.cx
    v = cam.fy * p[..., 1] / p[..., 2] + cam.cy
    return np.stack([u, v], axis=-1)


def pose_error(estimate, truth):
    """(translation error in mm, rotation error in degrees) between two poses."""
    trans = float(np.linalg.norm(estimate.translation - truth.translation))
    relative = estimate.rotation.T @ truth.rotation
    angle = math.acos(float(np.clip(0.5 * (np.trace(relative) - 1.0), -1.0, 1.0)))
    return trans, math.degrees(angle)
