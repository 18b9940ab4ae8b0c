# core/harness.py

"""
Experiment orchestration: benchmark scenes, perturbed initial poses, trials,
detection metrics and the report files of a run.

A run is fully determined by its RunConfig. Trials run in parallel across
seeds; their outcomes come back to a single collector that writes
trajectory.jsonl, summary.csv, curve.csv and timing.csv.
"""

import logging
import math
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings as django_settings
from joblib import Parallel, delayed
from scipy.spatial.transform import Rotation
from tqdm import tqdm

from .calib import ResponseCurve
from .config import pose_entry, scene_from_dict, write_yaml
from .exceptions import ActivePoseError, ContractViolationError, EmptyMeasurementError
from .geometry import CameraModel, Pose, pose_error
from .icp import IcpOptions, icp_refine_baseline
from .io import pose_from_json, read_jsonl, write_jsonl
from .meshes import PROCEDURAL_KINDS, bin_parts, procedural_mesh
from .nbv import active_loop, fibonacci_hemisphere, trajectory_summary
from .refine import refine
from .render import MATERIAL_PRESETS, object_visibility
from .sdf import cached_sdf
from .sensor import SimulatorSource, acquire

logger = logging.getLogger(__name__)

__all__ = [
    'DetectionMetric', 'METRICS', 'default_camera', 'default_response', 'evaluate_detection',
    'generate_benchmark_scene', 'load_estimates', 'perturb_pose', 'pose_error', 'run_experiment', 'run_trial',
    'simulate_views',
]

METRICS = {'5,5': (5.0, 5.0), '2,2': (2.0, 2.0)}
MIN_VISIBILITY = 0.8
LIGHT_OFFSET = (40.0, -30.0, 0.0)  # mm, camera frame
LIGHT_INTENSITY = 7.0e5
SCENE_EYE = (60.0, -100.0, 330.0)
PLACEMENT_HALF_RANGE = 30.0
FLOAT_FORMAT = '%.6f'


@dataclass(frozen=True)
class DetectionMetric:
    trans_thresh: float
    rot_thresh: float
    correct: int
    total: int

    @property
    def rate(self):
        return 100.0 * self.correct / self.total

    @property
    def label(self):
        return f"({self.trans_thresh:g},{self.rot_thresh:g})"

    def to_dict(self):
        return {'trans_thresh': self.trans_thresh, 'rot_thresh': self.rot_thresh, 'correct': self.correct,
                'total': self.total, 'rate': self.rate}


def _within(errors, trans_thresh, rot_thresh):
    trans_err, rot_err = errors
    return trans_err is not None and trans_err < trans_thresh and rot_err < rot_thresh


def evaluate_detection(results, trans_thresh=5.0, rot_thresh=5.0):
    """Count (estimate, truth) pairs within both thresholds."""
    results = list(results)
    if not results:
        raise ContractViolationError("Detection rate needs at least one result.")
    correct = sum(_within(pose_error(estimate, truth), trans_thresh, rot_thresh) for estimate, truth in results)
    return DetectionMetric(trans_thresh, rot_thresh, correct, len(results))


def _rate(errors, trans_thresh, rot_thresh):
    if not errors:
        return float('nan')
    return 100.0 * sum(_within(e, trans_thresh, rot_thresh) for e in errors) / len(errors)


def default_camera():
    return CameraModel(170.0, 170.0, 63.5, 47.5, 128, 96, 60.0)


def default_response():
    return ResponseCurve.linear()


def generate_benchmark_scene(kind, material='glossy', seed=0, camera=None, clutter=True):
    """
    Procedural bin-picking scene: the target object resting on a bin floor.

    The xy placement and yaw come from `seed`. Returns (scene document,
    SceneDescription, true T_wo of the target); the document is what gets
    written to scene.yaml and rebuilds the same scene.
    """
    if kind not in PROCEDURAL_KINDS:
        raise ContractViolationError(
            f"Unknown object kind '{kind}'. Choose one of: {', '.join(sorted(PROCEDURAL_KINDS))}.")
    if material not in MATERIAL_PRESETS:
        raise ContractViolationError(f"Unknown material '{material}'. Choose one of: {', '.join(MATERIAL_PRESETS)}.")
    camera = camera or default_camera()
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-PLACEMENT_HALF_RANGE, PLACEMENT_HALF_RANGE, size=2)
    yaw = rng.uniform(-math.pi, math.pi)

    mesh = procedural_mesh(kind)
    rotation = Rotation.from_rotvec([0.0, 0.0, yaw]).as_matrix()
    lift = -float((mesh.vertices @ rotation.T)[:, 2].min())
    target_pose = Pose(rotation, [x, y, lift])

    objects = [{'name': kind, 'procedural': kind, 'pose': pose_entry(target_pose), 'material': material}]
    if clutter:
        for i, (part, T_wo) in enumerate(bin_parts()):
            size = (part.vertices.max(axis=0) - part.vertices.min(axis=0)).tolist()
            objects.append({'name': f'bin-{i}', 'procedural': 'box', 'size': [round(s, 9) for s in size],
                            'pose': pose_entry(T_wo), 'material': 'matte'})
    document = {
        'camera': camera.to_dict(),
        'camera_pose': {'eye': list(SCENE_EYE), 'target': [round(float(x), 9), round(float(y), 9), 0.0]},
        'light': {'position': list(LIGHT_OFFSET), 'intensity': LIGHT_INTENSITY, 'frame': 'camera'},
        'ambient': 0.0,
        'exposure': 1.0,
        'target': 0,
        'objects': objects,
    }
    scene = scene_from_dict(document)
    return document, scene, scene.target_object.pose


def perturb_pose(T_wo, trans_cap, rot_cap_deg, rng):
    """
    Initial estimate T_ow from a true object pose.

    The offset is applied in the object frame: uniform direction, magnitude
    uniform in [0, cap], for translation and rotation independently.
    """
    def direction():
        v = rng.normal(size=3)
        return v / np.linalg.norm(v)

    offset = direction() * rng.uniform(0.0, trans_cap)
    rotvec = direction() * math.radians(rng.uniform(0.0, rot_cap_deg))
    delta = Pose(Rotation.from_rotvec(rotvec).as_matrix(), offset)
    return (T_wo @ delta).inverse()


def simulate_views(scene, candidates, prediction, response, seed=0, noise=True, outlier_fraction=0.0):
    """Acquisitions of the target from every candidate, in candidate order."""
    rng = np.random.default_rng(seed)
    return [acquire(scene, c.pose, prediction, response, rng, c.id, noise, outlier_fraction) for c in candidates]


def load_estimates(path):
    """
    (estimate, truth) object poses from a JSONL file.

    Each record holds 4x4 'estimate' and 'truth' matrices; with
    "frame": "T_ow" both are inverted to object poses first.
    """
    pairs = []
    for record in read_jsonl(path):
        estimate, truth = pose_from_json(record['estimate']), pose_from_json(record['truth'])
        if record.get('frame') == 'T_ow':
            estimate, truth = estimate.inverse(), truth.inverse()
        pairs.append((estimate, truth))
    return pairs


@dataclass
class TrialOutcome:
    kind: str
    seed: int
    material: str
    visibility: float = 0.0
    excluded: bool = False
    error: str = ''
    # policy or method -> list of (trans_err, rot_err), one per view count
    curves: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    timings: list = field(default_factory=list)


def _trial_setup(config, kind, seed):
    camera = config.camera_model()
    _, scene, truth_wo = generate_benchmark_scene(kind, config.material, seed, camera, config.clutter)
    cache_dir = Path(getattr(django_settings, 'SDF_CACHE_DIR', Path(config.out) / 'sdf'))
    grid = cached_sdf(scene.target_object.mesh, cache_dir, config.voxel)
    rng = np.random.default_rng([seed, 1])
    initial = perturb_pose(truth_wo, config.perturb_trans, config.perturb_rot_deg, rng)
    candidates = fibonacci_hemisphere(config.candidates, config.candidate_radius, initial.inverse().translation)
    return scene, grid, truth_wo.inverse(), initial, candidates


def _active_trial(outcome, config, scene, grid, truth, initial, candidates, prediction, response):
    for policy in config.policies:
        source = SimulatorSource(scene, prediction, response, outcome.seed, config.noise, config.outlier_fraction,
                                 config.stride)
        trajectory = active_loop(initial, candidates, source, scene, grid, prediction, response,
                                 config.stop_criteria(), policy, outcome.seed, config.refine_options(),
                                 config.stride, config.refine.get('gauge_tol', 1e-2), 1, truth)
        errors = [(r.trans_err, r.rot_err) for r in trajectory]
        outcome.curves[policy] = errors
        last = trajectory[-1] if trajectory else None
        outcome.summary.append({
            'policy': policy,
            'views_used': len(trajectory),
            'views_to_success': trajectory_summary(trajectory, *METRICS['5,5']),
            'views_to_success_22': trajectory_summary(trajectory, *METRICS['2,2']),
            'trans_err': last.trans_err if last else None,
            'rot_err': last.rot_err if last else None,
            'final_entropy': last.entropy if last else None,
            'converged': bool(last.converged) if last else False,
        })
        for record in trajectory:
            outcome.steps.append({'policy': policy, **record.to_dict()})
            outcome.timings.append({'policy': policy, 'step': record.step, 'wall_time': record.wall_time})


def _passive_trial(outcome, config, scene, grid, truth, initial, candidates, prediction, response):
    rng = np.random.default_rng([outcome.seed, 2])
    order = rng.permutation(len(candidates))
    source = SimulatorSource(scene, prediction, response, outcome.seed, config.noise, config.outlier_fraction,
                             config.stride)
    sets = []
    for index in order[:max(config.passive_views)]:
        try:
            sets.append(source.acquire(candidates[index].id, candidates[index].pose))
        except EmptyMeasurementError:
            sets.append(None)
    mesh = scene.target_object.mesh
    initial_err = pose_error(initial.inverse(), truth.inverse())
    for views in sorted(config.passive_views):
        chosen = [s for s in sets[:views] if s is not None]
        rows = {'initial': (initial_err, False)}
        if chosen:
            started = time.perf_counter()
            result = refine(chosen, initial, grid, config.refine_options())
            outcome.timings.append({'policy': 'sdf', 'step': views, 'wall_time': time.perf_counter() - started})
            rows['sdf'] = (pose_error(result.pose.inverse(), truth.inverse()), result.converged)
            started = time.perf_counter()
            baseline = icp_refine_baseline(chosen, initial, mesh, IcpOptions())
            outcome.timings.append({'policy': 'icp', 'step': views, 'wall_time': time.perf_counter() - started})
            rows['icp'] = (pose_error(baseline.pose.inverse(), truth.inverse()), baseline.converged)
        else:
            rows['sdf'] = rows['icp'] = ((None, None), False)
        for method, ((trans_err, rot_err), converged) in rows.items():
            outcome.curves.setdefault(method, []).append((trans_err, rot_err))
            outcome.summary.append({'policy': method, 'views_used': views, 'trans_err': trans_err,
                                    'rot_err': rot_err, 'converged': converged})
            outcome.steps.append({'policy': method, 'views': views, 'trans_err': trans_err, 'rot_err': rot_err,
                                  'converged': converged, 'points': sum(len(s) for s in chosen)})


def run_trial(config, kind, seed):
    """
    One benchmark trial. Errors are caught and recorded on the outcome so
    the remaining trials of the experiment still run.
    """
    outcome = TrialOutcome(kind, seed, config.material)
    try:
        scene, grid, truth, initial, candidates = _trial_setup(config, kind, seed)
        outcome.visibility = object_visibility(scene)
        if outcome.visibility < MIN_VISIBILITY:
            outcome.excluded = True
            logger.info("Trial %s/%d excluded: visibility %.2f", kind, seed, outcome.visibility)
            return outcome
        prediction, response = config.prediction_settings(), config.response_curve()
        run = _active_trial if config.mode == 'active' else _passive_trial
        run(outcome, config, scene, grid, truth, initial, candidates, prediction, response)
    except (ActivePoseError, np.linalg.LinAlgError) as exc:
        outcome.error = f"{type(exc).__name__}: {exc}"
        logger.warning("Trial %s/%d failed: %s", kind, seed, outcome.error)
        logger.debug("%s", traceback.format_exc())
    return outcome


def _curve_rows(outcomes, config):
    """Detection rate per (kind, policy, views) plus an 'all' kind row."""
    view_counts = range(1, config.max_views + 1) if config.mode == 'active' else sorted(config.passive_views)
    policies = list(config.policies) if config.mode == 'active' else ['initial', 'sdf', 'icp']
    counted = [o for o in outcomes if not o.excluded]
    rows = []
    for kind in [*config.all_kinds, 'all']:
        group = [o for o in counted if kind == 'all' or o.kind == kind]
        if not group:
            continue
        for policy in policies:
            for position, views in enumerate(view_counts):
                errors = []
                for o in group:
                    curve = o.curves.get(policy, [])
                    if config.mode == 'active':
                        errors.append(curve[min(views, len(curve)) - 1] if curve else (None, None))
                    else:
                        errors.append(curve[position] if position < len(curve) else (None, None))
                row = {'kind': kind, 'policy': policy, 'views': views, 'trials': len(group)}
                for name, (t, r) in METRICS.items():
                    row[f'rate_{name.replace(",", "_")}'] = _rate(errors, t, r)
                rows.append(row)
    return rows


def run_experiment(config, progress=True):
    """
    Run every (kind, seed) trial of the config and write the report files.

    Returns a dict with the output paths and the curve rows.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_yaml(out / 'config.yaml', config.to_dict())
    tasks = [(kind, seed) for kind in config.all_kinds for seed in range(config.seed, config.seed + config.seeds)]
    logger.info("Running %d trials in %s mode with %d jobs", len(tasks), config.mode, config.n_jobs)

    results = Parallel(n_jobs=config.n_jobs, return_as='generator')(
        delayed(run_trial)(config, kind, seed) for kind, seed in tasks
    )
    outcomes = list(tqdm(results, total=len(tasks), desc='trials', disable=not progress))

    trajectory, summary, timing = [], [], []
    for o in outcomes:
        base = {'kind': o.kind, 'seed': o.seed, 'material': o.material}
        for step in o.steps:
            trajectory.append({**base, **step})
        rows = o.summary or [{'policy': ''}]
        for row in rows:
            summary.append({**base, 'visibility': o.visibility, 'excluded': o.excluded, 'error': o.error, **row})
        for row in o.timings:
            timing.append({**base, **row})

    write_jsonl(out / 'trajectory.jsonl', trajectory)
    columns = ['kind', 'material', 'seed', 'policy', 'visibility', 'excluded', 'error', 'views_used',
               'views_to_success', 'views_to_success_22', 'trans_err', 'rot_err', 'final_entropy', 'converged']
    summary_frame = pd.DataFrame(summary).reindex(columns=columns)
    summary_frame.to_csv(out / 'summary.csv', index=False, float_format=FLOAT_FORMAT)
    curve = _curve_rows(outcomes, config)
    pd.DataFrame(curve).to_csv(out / 'curve.csv', index=False, float_format=FLOAT_FORMAT)
    pd.DataFrame(timing, columns=['kind', 'material', 'seed', 'policy', 'step', 'wall_time']).to_csv(
        out / 'timing.csv', index=False, float_format=FLOAT_FORMAT)

    failed = sum(bool(o.error) for o in outcomes)
    excluded = sum(o.excluded for o in outcomes)
    logger.info("Experiment finished: %d trials, %d excluded, %d failed", len(outcomes), excluded, failed)
    return {
        'out': str(out),
        'trials': len(outcomes),
        'excluded': excluded,
        'failed': failed,
        'curve': curve,
        'summary': summary_frame,
        'outcomes': outcomes,
    }
