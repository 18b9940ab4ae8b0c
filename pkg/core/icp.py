# core/icp.py

"""Point-to-mesh ICP, the unweighted comparison baseline for SDF refinement."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import EmptyMeasurementError
from .geometry import Pose, log_map
from .refine import RefinementResult, stack_sets, covariance_from_information, length_scale
from .sdf import closest_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpOptions:
    max_iters: int = 50
    step_tol: float = 1e-6
    # fraction of the worst correspondences dropped each iteration
    trim: float = 0.1
    variance_floor: float = 1e-6
    gauge_tol: float = 1e-2
    n_jobs: int = 1


def _kabsch(source, target):
    """Rigid transform minimising sum ||R source + t - target||^2."""
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    rotation, _ = Rotation.align_vectors(target - target_mean, source - source_mean)
    R = rotation.as_matrix()
    return Pose(R, target_mean - R @ source_mean)


def _keep_best(distances, trim):
    count = len(distances)
    kept = max(3, int(np.ceil(count * (1.0 - trim))))
    if kept >= count:
        return np.arange(count)
    return np.argsort(distances, kind='stable')[:kept]


def icp_refine_baseline(sets, T_init, mesh, opts=None):
    """
    Trimmed point-to-mesh ICP over all views jointly.

    Each iteration pairs every world point (mapped by the current T_ow) with
    its closest mesh point, drops the worst `trim` fraction and re-solves the
    pose in closed form. The covariance uses point-to-plane rows with the
    same depth-variance weighting as SDF refinement.
    """
    opts = opts or IcpOptions()
    points, depth_var, rays = stack_sets(sets)
    if len(points) == 0:
        raise EmptyMeasurementError("ICP needs at least one measurement point.")
    normals = mesh.face_normals()

    T = T_init
    converged = False
    iterations = 0
    history = []
    cost = np.inf
    while iterations < opts.max_iters:
        distances, closest, _ = closest_points(T.apply(points), mesh, n_jobs=opts.n_jobs)
        keep = _keep_best(distances, opts.trim)
        cost = float(np.mean(distances[keep] ** 2))
        history.append(cost)
        if len(keep) < 3:
            break
        T_new = _kabsch(points[keep], closest[keep])
        step = np.linalg.norm(log_map(T_new @ T.inverse()))
        T = T_new
        iterations += 1
        if step < opts.step_tol:
            converged = True
            break

    distances, closest, faces = closest_points(T.apply(points), mesh, n_jobs=opts.n_jobs)
    keep = _keep_best(distances, opts.trim)
    n = normals[faces[keep]]
    p_obj = closest[keep]
    J = np.hstack([n, np.cross(p_obj, n)])
    along_ray = np.einsum('ij,ij->i', n, T.rotate(rays[keep]))
    variance = np.maximum(along_ray ** 2 * depth_var[keep], opts.variance_floor)
    information = (J / variance[:, None]).T @ J
    covariance, rank = covariance_from_information(information, length_scale(sets, T), opts.gauge_tol)
    logger.debug("ICP: %d iterations, mean squared distance %.6g, converged=%s", iterations, cost, converged)
    return RefinementResult(T, covariance, iterations, cost, converged, rank, len(points), 'icp', history)
