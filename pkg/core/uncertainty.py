# core/uncertainty.py

"""
Per-pixel depth uncertainty of a structured-light stereo measurement.

The disparity variance of an SSD patch match is the inverse Fisher
information of the patch, sigma_I^2 / sum(g_x^2), where g_x is the
horizontal image gradient. It is propagated to depth through z = f*b/d and
the larger of the left-image and right-image estimates is kept.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .exceptions import ContractViolationError

logger = logging.getLogger(__name__)

DEFAULT_PATCH = 7
DEFAULT_SIGMA_IMG = 0.01
# Patches with less gradient energy than this cannot be matched.
MIN_GRADIENT_ENERGY = 1e-12


@dataclass(frozen=True)
class IntensityImage:
    """Normalized grayscale image, values in [0, 1], indexed [row, column]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ContractViolationError("An intensity image must be two-dimensional.")
        if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0.0 or values.max(initial=0.0) > 1.0:
            raise ContractViolationError("Intensity values must be finite and lie in [0, 1].")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """
    Depth (mm) and depth variance (mm^2) registered to the left image.

    Only pixels with `valid` set carry meaning; elsewhere depth and variance
    are arbitrary. `low_visibility` is set when the object was outside the
    frustum for a predicted map.
    """

    depth: np.ndarray
    variance: np.ndarray
    valid: np.ndarray
    low_visibility: bool = False
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        depth = np.array(self.depth, dtype=float)
        variance = np.array(self.variance, dtype=float)
        valid = np.array(self.valid, dtype=bool)
        if not (depth.shape == variance.shape == valid.shape) or depth.ndim != 2:
            raise ContractViolationError("Depth, variance and validity must be equally sized 2D arrays.")
        good = np.isfinite(depth) & np.isfinite(variance) & (depth > 0) & (variance > 0)
        if np.any(valid & ~good):
            raise ContractViolationError("Valid pixels need positive, finite depth and variance.")
        for name, array in (('depth', depth), ('variance', variance), ('valid', valid)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def invalid(cls, height, width, low_visibility=False):
        return cls(np.zeros((height, width)), np.full((height, width), np.inf),
                   np.zeros((height, width), dtype=bool), low_visibility)

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]

    def valid_count(self):
        return int(self.valid.sum())

    def masked(self, keep):
        """Copy with validity restricted to `keep`."""
        return DepthMap(self.depth, self.variance, self.valid & np.asarray(keep, dtype=bool),
                        self.low_visibility, dict(self.info))


def _patch_offsets(patch):
    if patch < 1 or patch % 2 == 0:
        raise ContractViolationError(f"Patch size must be a positive odd integer, got {patch}.")
    half = patch // 2
    dy, dx = np.mgrid[-half:half + 1, -half:half + 1]
    return half, dx.ravel().astype(float), dy.ravel().astype(float)


def _window_fits(image, xs, ys, half):
    # the central difference reads one pixel beyond the patch
    return ((xs - half - 1 >= 0) & (xs + half + 1 <= image.width - 1)
            & (ys - half >= 0) & (ys + half <= image.height - 1))


def gradient_energy(image, xs, ys, patch=DEFAULT_PATCH):
    """
    Sum over the patch of squared horizontal central differences.

    Accepts arrays of (possibly fractional) patch centres and samples the
    image bilinearly. Windows that do not fit return NaN.
    """
    half, dx, dy = _patch_offsets(patch)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    energy = np.full(xs.shape, np.nan)
    fits = _window_fits(image, xs, ys, half)
    if not np.any(fits):
        return energy
    px = xs[fits][:, None] + dx[None, :]
    py = ys[fits][:, None] + dy[None, :]
    right = map_coordinates(image.values, [py.ravel(), px.ravel() + 1.0], order=1, mode='nearest')
    left = map_coordinates(image.values, [py.ravel(), px.ravel() - 1.0], order=1, mode='nearest')
    g = 0.5 * (right - left).reshape(px.shape)
    energy[fits] = np.sum(g * g, axis=1)
    return energy


def _variance_from_energy(energy, sigma_img):
    with np.errstate(divide='ignore', invalid='ignore'):
        variance = sigma_img ** 2 / energy
    return np.where(np.isfinite(energy) & (energy >= MIN_GRADIENT_ENERGY), variance, np.inf)


def disparity_variance(left, right, disparity, u, patch=DEFAULT_PATCH, sigma_img=DEFAULT_SIGMA_IMG):
    """
    Disparity variance (px^2) of the match at left pixel u with disparity d.

    Gradients come from the right image around (u_x - d, u_y). Returns +inf
    (invalid) for flat patches or windows that leave either image.
    """
    if sigma_img <= 0:
        raise ContractViolationError("sigma_img must be positive.")
    half, _, _ = _patch_offsets(patch)
    ux, uy = float(u[0]), float(u[1])
    if not _window_fits(left, np.array([ux]), np.array([uy]), half)[0]:
        return float('inf')
    energy = gradient_energy(right, ux - disparity, uy, patch)[0]
    return float(_variance_from_energy(np.array([energy]), sigma_img)[0])


def depth_variance(sigma_d_sq, z, cam):
    """Propagate disparity variance to depth: (z^2 / (f*b))^2 * sigma_d^2."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ContractViolationError("Depth must be positive.")
    jacobian = z * z / cam.focal_baseline
    result = jacobian * jacobian * np.asarray(sigma_d_sq, dtype=float)
    return float(result) if result.ndim == 0 else result


def combined_depth_variance(var_from_left, var_from_right):
    """Larger of the two estimates; invalid (inf) if either one is."""
    a = np.asarray(var_from_left, dtype=float)
    b = np.asarray(var_from_right, dtype=float)
    result = np.where(np.isfinite(a) & np.isfinite(b), np.maximum(a, b), np.inf)
    return float(result) if result.ndim == 0 else result


def score_depth_map(left, right, depth, cam, patch=DEFAULT_PATCH, sigma_img=DEFAULT_SIGMA_IMG, tau_sigma=None):
    """
    Fill in the variance and validity of a depth map from its stereo images.

    Every valid pixel is scored from both images; pixels whose patch is flat
    or out of bounds become invalid. For predicted maps pass tau_sigma (mm):
    pixels with predicted sigma_z above it are marked missing too.
    """
    if sigma_img <= 0:
        raise ContractViolationError("sigma_img must be positive.")
    rows, cols = np.nonzero(depth.valid)
    variance = np.full(depth.depth.shape, np.inf)
    if rows.size:
        z = depth.depth[rows, cols]
        d = cam.disparity_from_depth(z)
        xs, ys = cols.astype(float), rows.astype(float)
        left_var = _variance_from_energy(gradient_energy(left, xs, ys, patch), sigma_img)
        right_var = _variance_from_energy(gradient_energy(right, xs - d, ys, patch), sigma_img)
        with np.errstate(invalid='ignore'):
            sigma_z_sq = combined_depth_variance(depth_variance(left_var, z, cam), depth_variance(right_var, z, cam))
        variance[rows, cols] = sigma_z_sq
    valid = depth.valid & np.isfinite(variance) & (variance > 0)
    if tau_sigma is not None:
        valid &= variance <= tau_sigma ** 2
    logger.debug("Scored %d of %d depth pixels as valid", int(valid.sum()), int(depth.valid.sum()))
    return DepthMap(depth.depth, variance, valid, depth.low_visibility, dict(depth.info))
