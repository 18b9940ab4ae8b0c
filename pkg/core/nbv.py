# core/nbv.py

"""
Next-best-view planning by predicted differential entropy of the pose belief.

For every candidate viewpoint the depth map it would deliver is predicted by
rendering the scene at the current pose estimate. Its Fisher information is
added to that of the views already acquired, and the candidate with the
lowest resulting entropy is chosen.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .exceptions import ContractViolationError, EmptyMeasurementError
from .geometry import look_at, pose_error
from .render import predict_depth_map
from .refine import (RefineOptions, build_measurement_set, covariance_from_information, information_matrix,
                     length_scale, refine)

logger = logging.getLogger(__name__)

POLICIES = ('nbv', 'random', 'max-distance', 'nbv-const-unc')
LOG_2PI_E = math.log(2.0 * math.pi * math.e)
SINGULAR_RTOL = 1e-12
DEFAULT_CONSTANT_SIGMA = 1.0


@dataclass(frozen=True)
class ViewpointCandidate:
    id: int
    pose: object
    visited: bool = False

    @property
    def centre(self):
        return np.asarray(self.pose.translation)


def entropy(cov):
    """Differential entropy (nats) of a 6D Gaussian; +inf when the covariance is singular."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ContractViolationError(f"Expected a 6x6 covariance, got {cov.shape}.")
    if np.max(np.abs(cov - cov.T)) > 1e-6:
        raise ContractViolationError("Covariance must be symmetric.")
    eigvals = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eigvals.max() <= 0 or eigvals.min() <= SINGULAR_RTOL * eigvals.max():
        return math.inf
    return 0.5 * (6 * LOG_2PI_E + float(np.sum(np.log(eigvals))))


def observable_entropy(cov, rank):
    """Entropy restricted to the `rank` directions the data constrains."""
    if rank == 6:
        return entropy(cov)
    eigvals = np.sort(np.linalg.eigvalsh(0.5 * (cov + cov.T)))[::-1][:rank]
    eigvals = eigvals[eigvals > 0]
    if eigvals.size == 0:
        return math.inf
    return 0.5 * (eigvals.size * LOG_2PI_E + float(np.sum(np.log(eigvals))))


@dataclass(frozen=True)
class PoseBelief:
    """Pose estimate T_ow with its covariance; entropy is always recomputed."""

    pose: object
    covariance: np.ndarray
    rank: int = 6

    @property
    def entropy_nats(self):
        return entropy(self.covariance)


def pose_covariance(sets, T_ow, grid, gauge_tol=1e-2):
    """Covariance (J^T Sigma^-1 J)^-1 of the stacked sets; returns (covariance, rank)."""
    if not sets:
        raise ContractViolationError("Pose covariance needs at least one measurement set.")
    return covariance_from_information(information_matrix(sets, T_ow, grid), length_scale(sets, T_ow), gauge_tol)


def fibonacci_hemisphere(count=40, radius=350.0, centre=(0.0, 0.0, 0.0), min_elevation_deg=20.0):
    """Candidate cameras spread over the upper hemisphere, all looking at `centre`."""
    centre = np.asarray(centre, dtype=float)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    z_min = math.sin(math.radians(min_elevation_deg))
    candidates = []
    for i in range(count):
        z = 1.0 - (1.0 - z_min) * (i + 0.5) / count
        ring = math.sqrt(max(0.0, 1.0 - z * z))
        phi = golden * i
        eye = centre + radius * np.array([ring * math.cos(phi), ring * math.sin(phi), z])
        candidates.append(ViewpointCandidate(i, look_at(eye, centre)))
    return candidates


def predict_candidate(cand, belief, scene, grid, settings, response, stride=1):
    """
    Measurement set the candidate is expected to deliver at the current estimate.

    Returns None when nothing of the target would be measured (no information).
    """
    depth = predict_depth_map(scene, belief.pose.inverse(), cand.pose, settings, response)
    try:
        return build_measurement_set(depth, depth.valid, scene.camera, cand.pose, cand.id, stride)
    except EmptyMeasurementError:
        return None


@dataclass(frozen=True)
class CandidateScore:
    id: int
    entropy: float
    rank: int
    points: int


@dataclass(frozen=True)
class Selection:
    best: ViewpointCandidate
    scores: list
    no_information: bool = False

    def table(self):
        return [{'id': s.id, 'entropy': s.entropy, 'rank': s.rank, 'points': s.points} for s in self.scores]


def _score(cand, base_information, belief, scene, grid, settings, response, stride, gauge_tol, scale):
    predicted = predict_candidate(cand, belief, scene, grid, settings, response, stride)
    information = base_information.copy()
    points = 0
    if predicted is not None:
        information += information_matrix([predicted], belief.pose, grid)
        points = len(predicted)
    covariance, rank = covariance_from_information(information, scale, gauge_tol)
    return CandidateScore(cand.id, observable_entropy(covariance, rank), rank, points)


def select_nbv(candidates, acquired_sets, belief, scene, grid, settings, response, stride=1, gauge_tol=1e-2,
               n_jobs=1):
    """
    Pick the unvisited candidate with the lowest predicted entropy.

    Candidates are ranked by (more observable directions, lower entropy,
    lower id). Returns the full score table alongside the winner.
    """
    unvisited = sorted((c for c in candidates if not c.visited), key=lambda c: c.id)
    if not unvisited:
        raise ContractViolationError("No unvisited candidate viewpoint left.")
    base = information_matrix(acquired_sets, belief.pose, grid) if acquired_sets else np.zeros((6, 6))
    scale = length_scale(acquired_sets, belief.pose) if acquired_sets else max(1.0, _grid_radius(grid))
    scores = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_score)(c, base, belief, scene, grid, settings, response, stride, gauge_tol, scale)
        for c in unvisited
    )
    if all(s.points == 0 for s in scores):
        logger.warning("No candidate is predicted to see the object; taking candidate %d", unvisited[0].id)
        return Selection(unvisited[0], scores, no_information=True)
    best = min(scores, key=lambda s: (-s.rank, s.entropy, s.id))
    chosen = next(c for c in unvisited if c.id == best.id)
    return Selection(chosen, scores)


def _grid_radius(grid):
    return 0.5 * float(np.linalg.norm(grid.upper - grid.origin))


@dataclass(frozen=True)
class StopCriteria:
    entropy_threshold: float = -10.0
    max_views: int = 5


@dataclass
class StepRecord:
    """One iteration of the acquisition loop."""

    step: int
    view_id: int
    pose: object
    covariance: np.ndarray
    entropy: float
    rank: int
    converged: bool
    points: int
    trans_err: float = None
    rot_err: float = None
    predicted_entropy: float = None
    scores: list = field(default_factory=list)
    no_information: bool = False
    note: str = ''
    wall_time: float = 0.0

    def to_dict(self):
        """Deterministic fields only; wall time is reported separately."""
        return {
            'step': self.step,
            'view_id': self.view_id,
            'pose': self.pose.as_matrix().tolist(),
            'covariance': [float(v) for v in np.asarray(self.covariance).ravel()],
            'entropy': _json_float(self.entropy),
            'rank': self.rank,
            'converged': self.converged,
            'points': self.points,
            'trans_err': self.trans_err,
            'rot_err': self.rot_err,
            'predicted_entropy': _json_float(self.predicted_entropy),
            'scores': [{**s, 'entropy': _json_float(s['entropy'])} for s in self.scores],
            'no_information': self.no_information,
            'note': self.note,
        }


def _json_float(value):
    if value is None:
        return None
    return value if math.isfinite(value) else ('inf' if value > 0 else '-inf')


def _max_distance_choice(unvisited, visited, rng):
    if not visited:
        return unvisited[int(rng.integers(len(unvisited)))]
    centres = np.array([c.centre for c in visited])
    spread = [float(np.min(np.linalg.norm(centres - c.centre, axis=1))) for c in unvisited]
    return unvisited[int(np.argmax(spread))]


def active_loop(initial_pose, candidates, source, scene, grid, settings, response, stop=None, policy='nbv',
                seed=0, refine_opts=None, stride=1, gauge_tol=1e-2, n_jobs=1, truth=None):
    """
    Acquire views one at a time until the entropy threshold or view budget is reached.

    `source` provides measurement sets through acquire(view_id, T_wc). The pose
    is re-refined with all views after each acquisition; a refinement that
    does not converge keeps the previous pose. Returns the list of StepRecords.
    """
    if policy not in POLICIES:
        raise ContractViolationError(f"Unknown policy {policy!r}; choose one of {', '.join(POLICIES)}.")
    if not candidates:
        raise ContractViolationError("At least one candidate viewpoint is required.")
    stop = stop or StopCriteria()
    refine_opts = refine_opts or RefineOptions()
    rng = np.random.default_rng(seed)
    truth = truth if truth is not None else getattr(source, 'truth', None)
    if policy == 'nbv-const-unc':
        settings = replace(settings, constant_sigma=settings.constant_sigma or DEFAULT_CONSTANT_SIGMA)

    pool = {c.id: replace(c, visited=False) for c in candidates}
    visited = []
    acquired = []
    belief = PoseBelief(initial_pose, np.full((6, 6), np.nan), 0)
    trajectory = []

    for step in range(stop.max_views):
        started = time.perf_counter()
        unvisited = sorted((c for c in pool.values() if not c.visited), key=lambda c: c.id)
        if not unvisited:
            break
        selection = None
        if policy in ('nbv', 'nbv-const-unc'):
            selection = select_nbv(unvisited, acquired, belief, scene, grid, settings, response, stride,
                                   gauge_tol, n_jobs)
            chosen = selection.best
        elif policy == 'random':
            chosen = unvisited[int(rng.integers(len(unvisited)))]
        else:
            chosen = _max_distance_choice(unvisited, visited, rng)
        pool[chosen.id] = replace(chosen, visited=True)
        visited.append(chosen)

        note = ''
        try:
            acquired.append(source.acquire(chosen.id, chosen.pose))
        except EmptyMeasurementError:
            note = 'object not visible'

        pose, converged = belief.pose, False
        if acquired:
            result = refine(acquired, belief.pose, grid, refine_opts)
            converged = result.converged
            if converged:
                pose = result.pose
            else:
                note = note or 'refinement did not converge'
            covariance, rank = pose_covariance(acquired, pose, grid, gauge_tol)
            belief = PoseBelief(pose, covariance, rank)

        record = StepRecord(
            step=step, view_id=chosen.id, pose=belief.pose,
            covariance=np.nan_to_num(belief.covariance, nan=0.0),
            entropy=belief.entropy_nats if acquired else math.inf, rank=belief.rank, converged=converged,
            points=sum(len(s) for s in acquired), note=note,
        )
        if selection is not None:
            record.scores = selection.table()
            record.no_information = selection.no_information
            record.predicted_entropy = next(s.entropy for s in selection.scores if s.id == chosen.id)
        if truth is not None:
            record.trans_err, record.rot_err = pose_error(belief.pose.inverse(), truth.inverse())
        record.wall_time = time.perf_counter() - started
        trajectory.append(record)
        logger.info("Step %d: view %d, entropy %s nats, rank %d", step, chosen.id, record.entropy, record.rank)
        if selection is not None:
            logger.debug("Score table: %s", record.scores)
        if acquired and record.entropy < stop.entropy_threshold:
            break
    return trajectory


def trajectory_summary(trajectory, trans_thresh=5.0, rot_thresh=5.0):
    """Views needed to first reach the (trans, rot) criterion, or None."""
    for record in trajectory:
        if record.trans_err is not None and record.trans_err < trans_thresh and record.rot_err < rot_thresh:
            return record.step + 1
    return None
