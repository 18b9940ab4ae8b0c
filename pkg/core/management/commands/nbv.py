# core/management/commands/nbv.py

from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings

from core.config import load_scene, write_yaml
from core.exceptions import ConfigurationError
from core.harness import generate_benchmark_scene, perturb_pose
from core.io import DatasetSource, pose_from_json, read_json, write_jsonl
from core.nbv import POLICIES, active_loop, fibonacci_hemisphere, trajectory_summary
from core.sdf import cached_sdf
from core.sensor import SimulatorSource

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Runs the active acquisition loop on one simulated scene or on a dataset directory.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--policy', choices=POLICIES, default='nbv')
        parser.add_argument('--max-views', type=int, dest='max_views')
        parser.add_argument('--entropy-threshold', type=float, dest='entropy_threshold')
        parser.add_argument('--dataset', help='Choose among the views of this dataset instead of simulating.')
        parser.add_argument('--scene', help='Scene YAML used for prediction with --dataset.')
        parser.add_argument('--init', help='JSON with the initial T_ow (dataset mode).')

    def _simulated(self, config):
        _, scene, truth_wo = generate_benchmark_scene(config.kind, config.material, config.seed,
                                                      config.camera_model(), config.clutter)
        initial = perturb_pose(truth_wo, config.perturb_trans, config.perturb_rot_deg,
                               np.random.default_rng([config.seed, 1]))
        candidates = fibonacci_hemisphere(config.candidates, config.candidate_radius, initial.inverse().translation)
        source = SimulatorSource(scene, config.prediction_settings(), config.response_curve(), config.seed,
                                 config.noise, config.outlier_fraction, config.stride)
        return scene, initial, candidates, source

    def _from_dataset(self, config, options):
        dataset = Path(options['dataset'])
        scene_path = Path(options['scene'] or dataset / 'scene.yaml')
        init_path = Path(options['init'] or dataset / 'init.json')
        if not scene_path.exists() or not init_path.exists():
            raise ConfigurationError("Dataset mode needs a scene (--scene) and an initial pose (--init).")
        scene = load_scene(scene_path)
        source = DatasetSource(dataset, stride=config.stride)
        return scene, pose_from_json(read_json(init_path)['T_ow']), source.candidates(), source

    def run(self, **options):
        config = self.load_config(options, max_views=options.get('max_views'),
                                  entropy_threshold=options.get('entropy_threshold'))
        if options['dataset']:
            scene, initial, candidates, source = self._from_dataset(config, options)
        else:
            scene, initial, candidates, source = self._simulated(config)
        grid = cached_sdf(scene.target_object.mesh, settings.SDF_CACHE_DIR, config.voxel)
        self.stdout.write(self.style.SUCCESS(
            f"--- {options['policy']} over {len(candidates)} candidates, at most {config.max_views} views ---"))

        trajectory = active_loop(initial, candidates, source, scene, grid, config.prediction_settings(),
                                 config.response_curve(), config.stop_criteria(), options['policy'], config.seed,
                                 config.refine_options(), config.stride, config.refine.get('gauge_tol', 1e-2),
                                 config.n_jobs)

        out = Path(config.out)
        write_yaml(out / 'config.yaml', config.to_dict())
        write_jsonl(out / 'trajectory.jsonl', [r.to_dict() for r in trajectory])
        pd.DataFrame([{'step': r.step, 'view_id': r.view_id, 'entropy': r.entropy, 'rank': r.rank,
                       'trans_err': r.trans_err, 'rot_err': r.rot_err, 'converged': r.converged,
                       'wall_time': r.wall_time} for r in trajectory]).to_csv(out / 'steps.csv', index=False,
                                                                                float_format='%.6f')
        for r in trajectory:
            line = f"step {r.step}: view {r.view_id}, entropy {r.entropy:.3f} nats, rank {r.rank}"
            if r.trans_err is not None:
                line += f", error {r.trans_err:.2f} mm / {r.rot_err:.2f} deg"
            self.stdout.write(line)
            if r.note:
                self.warning(f"  {r.note}")
        needed = trajectory_summary(trajectory)
        if needed is not None:
            self.success(f"(5,5) reached after {needed} views.")
        elif trajectory and trajectory[-1].trans_err is not None:
            self.warning("(5,5) not reached within the view budget.")
        self.success(f"Trajectory written to {out}.")
