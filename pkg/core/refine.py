# core/refine.py

"""
Multi-view pose refinement against the object's signed distance field.

World-frame measurement points p_w are mapped into the object frame with the
pose T_ow and should land on the zero level set. Each residual is weighted by
the variance of its SDF value, obtained by pushing the depth variance along
the viewing ray through the SDF gradient. The weighted least-squares problem
is solved by iteratively reweighted Gauss-Newton over se(3) with a Levenberg
safeguard, and the final normal matrix is the Fisher information used by the
view planner.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import sdf
from .exceptions import ContractViolationError, EmptyMeasurementError
from .geometry import Pose, exp_map

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class MeasurementSet:
    """Points of one view in the world frame, with depth variance and unit viewing rays."""

    points_world: np.ndarray
    depth_variance: np.ndarray
    ray_dirs_world: np.ndarray
    view_id: int = 0

    def __post_init__(self):
        points = np.array(self.points_world, dtype=float).reshape(-1, 3)
        variance = np.array(self.depth_variance, dtype=float).reshape(-1)
        rays = np.array(self.ray_dirs_world, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            raise EmptyMeasurementError("A measurement set needs at least one point.")
        if not (len(points) == len(variance) == len(rays)):
            raise ContractViolationError("Points, variances and rays must have the same length.")
        if np.any(~np.isfinite(variance)) or np.any(variance <= 0):
            raise ContractViolationError("Depth variances must be positive and finite.")
        norms = np.linalg.norm(rays, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractViolationError("Viewing rays must be unit vectors.")
        rays = rays / norms[:, None]
        for name, array in (('points_world', points), ('depth_variance', variance), ('ray_dirs_world', rays)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __len__(self):
        return len(self.points_world)


@dataclass(frozen=True)
class RefineOptions:
    max_iters: int = 50
    step_tol: float = 1e-6
    cost_rtol: float = 1e-9
    lambda_init: float = 1e-6
    lambda_max: float = 1e3
    variance_floor: float = VARIANCE_FLOOR
    gauge_tol: float = 1e-2
    # Residuals larger than this (mm) contribute a constant cost; None disables.
    outlier_gate: float = None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class RefinementResult:
    pose: Pose
    covariance: np.ndarray
    iterations: int
    final_cost: float
    converged: bool
    rank: int = 6
    point_count: int = 0
    method: str = 'sdf'
    history: list = field(default_factory=list, compare=False)

    @property
    def rank_deficient(self):
        return self.rank < 6

    def to_record(self):
        """JSON-ready dict: pose 4x4 row-major, covariance as 36 row-major values."""
        return {
            'method': self.method,
            'pose': self.pose.as_matrix().tolist(),
            'covariance': [float(v) for v in self.covariance.ravel()],
            'iterations': self.iterations,
            'final_cost': float(self.final_cost),
            'converged': bool(self.converged),
            'rank': int(self.rank),
            'rank_deficient': self.rank_deficient,
            'point_count': int(self.point_count),
        }


def build_measurement_set(depth, mask, cam, T_wc, view_id=0, stride=1):
    """
    Back-project the valid pixels inside `mask` into a world-frame measurement set.

    `stride` keeps every stride-th row and column. Raises
    EmptyMeasurementError when nothing survives.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.depth.shape:
        raise ContractViolationError("Mask and depth map must have the same size.")
    keep = depth.valid & mask
    if stride > 1:
        grid = np.zeros_like(keep)
        grid[::stride, ::stride] = True
        keep &= grid
    rows, cols = np.nonzero(keep)
    if rows.size == 0:
        raise EmptyMeasurementError(f"No valid masked depth pixels in view {view_id}.")
    bearings = cam.bearings(cols.astype(float), rows.astype(float))
    z = depth.depth[rows, cols]
    points_cam = z[:, None] * bearings
    rays_cam = bearings / np.linalg.norm(bearings, axis=1, keepdims=True)
    return MeasurementSet(T_wc.apply(points_cam), depth.variance[rows, cols], T_wc.rotate(rays_cam), view_id)


def stack_sets(sets):
    if not sets:
        return np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3))
    return (np.vstack([s.points_world for s in sets]),
            np.concatenate([s.depth_variance for s in sets]),
            np.vstack([s.ray_dirs_world for s in sets]))


def sdf_residuals(sets, T_ow, grid):
    points, _, _ = stack_sets(sets)
    if len(points) == 0:
        return np.zeros(0)
    return sdf.sample(grid, T_ow.apply(points))


def _jacobian_rows(points_obj, grads):
    return np.hstack([grads, np.cross(points_obj, grads)])


def sdf_jacobian(sets, T_ow, grid):
    """
    d r / d xi for the left update T <- exp(xi) T.

    Row i is grad^T [I | -[p_o]x] = [grad, p_o x grad].
    """
    points, _, _ = stack_sets(sets)
    if len(points) == 0:
        return np.zeros((0, 6))
    points_obj = T_ow.apply(points)
    return _jacobian_rows(points_obj, sdf.gradient(grid, points_obj))


def _variance_from(grads, rays_world, depth_var, T_ow, floor):
    along_ray = np.einsum('ij,ij->i', grads, T_ow.rotate(rays_world))
    return np.maximum(along_ray * along_ray * depth_var, floor)


def sdf_variance(sets, T_ow, grid, floor=VARIANCE_FLOOR):
    """Variance of each SDF residual: (grad . R_ow ray)^2 sigma_z^2, floored."""
    points, depth_var, rays = stack_sets(sets)
    if len(points) == 0:
        return np.zeros(0)
    grads = sdf.gradient(grid, T_ow.apply(points))
    return _variance_from(grads, rays, depth_var, T_ow, floor)


def linearize(sets, T_ow, grid, floor=VARIANCE_FLOOR):
    """Residuals, Jacobian and variances at T_ow in one pass."""
    points, depth_var, rays = stack_sets(sets)
    if len(points) == 0:
        return np.zeros(0), np.zeros((0, 6)), np.zeros(0)
    points_obj = T_ow.apply(points)
    grads = sdf.gradient(grid, points_obj)
    return (sdf.sample(grid, points_obj), _jacobian_rows(points_obj, grads),
            _variance_from(grads, rays, depth_var, T_ow, floor))


def information_matrix(sets, T_ow, grid, floor=VARIANCE_FLOOR):
    """Fisher information J^T Sigma^-1 J of the stacked sets (6x6)."""
    _, J, variance = linearize(sets, T_ow, grid, floor)
    return (J / variance[:, None]).T @ J


def length_scale(sets, T_ow):
    """RMS distance of the points from the object origin (mm), at least 1."""
    points, _, _ = stack_sets(sets)
    if len(points) == 0:
        return 1.0
    return max(1.0, float(np.sqrt(np.mean(np.sum(T_ow.apply(points) ** 2, axis=1)))))


def covariance_from_information(information, scale=1.0, gauge_tol=1e-2):
    """
    Invert a 6x6 information matrix, detecting unobservable directions.

    Rotation columns are divided by `scale` (mm) so that all six directions
    are compared in millimetres. Eigen-directions below gauge_tol times the
    largest eigenvalue are dropped (pseudo-inverse). Returns (covariance, rank).
    """
    information = 0.5 * (information + information.T)
    D = np.diag([1.0, 1.0, 1.0, scale, scale, scale])
    D_inv = np.diag(1.0 / np.diag(D))
    scaled = D_inv @ information @ D_inv
    eigvals, eigvecs = np.linalg.eigh(scaled)
    top = eigvals.max(initial=0.0)
    if top <= 0:
        return np.zeros((6, 6)), 0
    keep = eigvals > gauge_tol * top
    inv_scaled = (eigvecs[:, keep] / eigvals[keep]) @ eigvecs[:, keep].T
    covariance = D_inv @ inv_scaled @ D_inv
    return 0.5 * (covariance + covariance.T), int(keep.sum())


def _weighted_cost(r, variance, gate):
    if gate is None:
        return float(np.sum(r * r / variance)), 1.0 / variance
    inlier = np.abs(r) <= gate
    cost = np.where(inlier, r * r, gate * gate) / variance
    return float(np.sum(cost)), np.where(inlier, 1.0 / variance, 0.0)


def refine(sets, T_init, grid, opts=None):
    """
    Uncertainty-weighted Gauss-Newton with Levenberg damping.

    The weights 1/Sigma_sdf are held at the current linearisation point while
    (J^T W J + lambda mu I) delta = -J^T W r is solved and the trial pose is
    scored, mu being the mean diagonal of J^T W J. Variances are recomputed
    only once a step is accepted. A rejected step raises lambda tenfold.
    Non-convergence is reported through `converged`, never raised.
    """
    opts = opts or RefineOptions()
    total = sum(len(s) for s in sets)
    if total == 0:
        raise EmptyMeasurementError("Refinement needs at least one measurement point.")
    if total < 6:
        logger.warning("Refining with only %d points; the pose is under-constrained", total)

    T = T_init
    r, J, variance = linearize(sets, T, grid, opts.variance_floor)
    cost, weights = _weighted_cost(r, variance, opts.outlier_gate)
    lam = opts.lambda_init
    iterations = 0
    converged = False
    history = [cost]

    while iterations < opts.max_iters and not converged:
        H = (J * weights[:, None]).T @ J
        g = J.T @ (weights * r)
        mu = max(float(np.trace(H)) / 6.0, np.finfo(float).tiny)
        accepted = False
        while not accepted:
            try:
                delta = np.linalg.solve(H + lam * mu * np.eye(6), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.linalg.norm(delta) < opts.step_tol:
                converged = True
                break
            if delta is not None and np.all(np.isfinite(delta)):
                T_new = exp_map(delta) @ T
                # scored with the variances of the linearisation point
                trial, _ = _weighted_cost(sdf_residuals(sets, T_new, grid), variance, opts.outlier_gate)
                if trial <= cost:
                    relative = (cost - trial) / max(cost, 1e-300)
                    T = T_new
                    r, J, variance = linearize(sets, T, grid, opts.variance_floor)
                    cost, weights = _weighted_cost(r, variance, opts.outlier_gate)
                    lam = max(lam / 10.0, 1e-12)
                    iterations += 1
                    history.append(cost)
                    accepted = True
                    if relative < opts.cost_rtol:
                        converged = True
                    continue
            lam *= 10.0
            if lam > opts.lambda_max:
                logger.debug("Damping exceeded %.0e; stopping without convergence", opts.lambda_max)
                break
        if not accepted and not converged:
            break

    information = (J * weights[:, None]).T @ J
    covariance, rank = covariance_from_information(information, length_scale(sets, T), opts.gauge_tol)
    if rank < 6:
        logger.info("Information matrix has rank %d; pose is not fully observable", rank)
    logger.debug("Refinement: %d iterations, cost %.6g, converged=%s", iterations, cost, converged)
    return RefinementResult(T, covariance, iterations, cost, converged, rank, total, 'sdf', history)
