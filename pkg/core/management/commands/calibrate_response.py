# core/management/commands/calibrate_response.py

from pathlib import Path

import numpy as np
import pandas as pd

from core.calib import ResponseCurve, recover_response
from core.exceptions import ConfigurationError, DataError
from core.harness import default_camera, generate_benchmark_scene
from core.io import read_png, write_json
from core.render import render_image, render_radiance
from core.uncertainty import IntensityImage

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Recovers the camera response curve from a static multi-exposure image stack.'

    def add_arguments(self, parser):
        parser.add_argument('images', nargs='*', help='Grayscale PNG images of one static scene.')
        exposures = parser.add_mutually_exclusive_group()
        exposures.add_argument('--exposures', type=float, nargs='+', help='Exposure time of every image.')
        exposures.add_argument('--exposure-csv', dest='exposure_csv',
                               help="CSV with an 'exposure' column, one row per image in order. Without image "
                                    "arguments an 'image' column names the files, relative to the CSV.")
        parser.add_argument('--synthetic-gamma', type=float, dest='gamma',
                            help='Ignore images; render a stack through a gamma curve and recover it.')
        parser.add_argument('--smoothing', type=float, default=50.0)
        parser.add_argument('--samples', type=int, default=200, help='Pixels sampled for the solve.')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out', default='response.json')

    def _synthetic_stack(self, gamma, seed):
        _, scene, _ = generate_benchmark_scene('glossy-part', 'matte', seed, default_camera())
        radiance = render_radiance(scene)
        truth = ResponseCurve.gamma(gamma)
        # spread the scene's radiance over the usable range of the middle exposure
        peak = float(np.percentile(radiance.values[radiance.hit], 99)) if radiance.hit.any() else 1.0
        base = 1.0 / max(peak, 1e-12)
        exposures = [base * f for f in (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)]
        images = [render_image(radiance, truth, dt) for dt in exposures]
        return images, exposures, truth

    def _read_exposure_csv(self, path, images):
        try:
            table = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataError(f"Cannot read exposure table {path}: {exc}") from exc
        if 'exposure' not in table.columns:
            raise ConfigurationError(f"{path} has no 'exposure' column.")
        if not images:
            if 'image' not in table.columns:
                raise ConfigurationError(f"{path} has no 'image' column and no images were passed.")
            images = [str(Path(path).parent / name) for name in table['image']]
        return images, [float(v) for v in table['exposure']]

    def run(self, **options):
        truth = None
        if options['gamma']:
            images, exposures, truth = self._synthetic_stack(options['gamma'], options['seed'])
            self.stdout.write(f"Rendered a synthetic stack of {len(images)} exposures (gamma {options['gamma']}).")
        else:
            paths, exposures = options['images'], options['exposures']
            if options['exposure_csv']:
                paths, exposures = self._read_exposure_csv(options['exposure_csv'], paths)
            if not paths or not exposures:
                raise ConfigurationError("Pass image files with --exposures or --exposure-csv, or --synthetic-gamma.")
            if len(paths) != len(exposures):
                raise ConfigurationError(f"Got {len(paths)} images but {len(exposures)} exposure times.")
            images = [IntensityImage(read_png(path)) for path in paths]

        curve = recover_response(images, exposures, options['smoothing'], options['samples'])
        write_json(Path(options['out']), curve.to_dict())
        self.success(f"Response curve written to {options['out']}.")

        if truth is not None:
            levels = np.arange(20, 236)
            rms = float(np.sqrt(np.mean((curve.log_exposure[levels] - truth.log_exposure[levels]) ** 2)))
            style = self.style.SUCCESS if rms <= 0.02 else self.style.WARNING
            self.stdout.write(style(f"RMS log-exposure error over levels 20..235: {rms:.4f}"))
