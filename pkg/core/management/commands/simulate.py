# core/management/commands/simulate.py

from pathlib import Path

import numpy as np
from tqdm import tqdm

from core.config import write_yaml
from core.harness import generate_benchmark_scene, perturb_pose
from core.io import write_dataset, write_json, write_pfm
from core.nbv import fibonacci_hemisphere
from core.render import render_radiance
from core.sensor import acquire

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Generates a benchmark scene and writes simulated sensor views as a dataset directory.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--views', type=int, default=8, help='Number of candidate views to capture.')
        parser.add_argument('--no-noise', action='store_true', help='Write the predicted depth without noise.')
        parser.add_argument('--outliers', type=float, help='Fraction of valid pixels replaced by outliers.')
        parser.add_argument('--radiance', action='store_true',
                            help='Also write the multi-path radiance of every view (for fit_bsdf).')

    def run(self, **options):
        config = self.load_config(options, outlier_fraction=options.get('outliers'))
        if options['no_noise']:
            config.noise = False
        out = Path(config.out)
        self.stdout.write(self.style.SUCCESS(f"--- Simulating {config.kind} ({config.material}), seed {config.seed} ---"))

        document, scene, truth_wo = generate_benchmark_scene(config.kind, config.material, config.seed,
                                                             config.camera_model(), config.clutter)
        write_yaml(out / 'scene.yaml', document)

        rng = np.random.default_rng(config.seed)
        initial = perturb_pose(truth_wo, config.perturb_trans, config.perturb_rot_deg, rng)
        write_json(out / 'init.json', {'T_ow': initial.as_matrix().tolist()})

        candidates = fibonacci_hemisphere(config.candidates, config.candidate_radius, truth_wo.translation)
        count = min(options['views'], len(candidates))
        picks = np.sort(rng.choice(len(candidates), size=count, replace=False))
        prediction, response = config.prediction_settings(), config.response_curve()

        shots = []
        for index in tqdm(picks, desc='views'):
            cand = candidates[index]
            shot = acquire(scene, cand.pose, prediction, response, rng, cand.id, config.noise,
                           config.outlier_fraction)
            if not shot.depth.valid.any():
                self.warning(f"View {cand.id}: no valid depth on the object.")
            shots.append(shot)
            if options['radiance']:
                radiance = render_radiance(scene.with_camera_pose(cand.pose), 'multi', prediction.bounces)
                write_pfm(out / 'views' / f"{cand.id:03d}" / 'radiance.pfm', radiance.values)
        write_dataset(out, scene.camera, shots, truth_wo.inverse())
        self.success(f"Wrote scene.yaml, init.json and {len(shots)} views to {out}.")
