# core/management/commands/fit_bsdf.py

from pathlib import Path

import numpy as np
import pandas as pd

from core.calib import BSDF_FIELDS, FitOptions, ResponseCurve, fit_bsdf, radiance_from_image, residual_map
from core.config import load_scene
from core.exceptions import ConfigurationError
from core.io import read_json, read_pfm, read_png, write_json, write_pfm
from core.render import BsdfParams, RadianceImage, render_radiance
from core.uncertainty import IntensityImage

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = "Fits the target object's BSDF coefficients to a measured radiance image by inverse rendering."

    def add_arguments(self, parser):
        parser.add_argument('--scene', required=True, help='Scene YAML; the target object gets the fitted BSDF.')
        target = parser.add_mutually_exclusive_group(required=True)
        target.add_argument('--target', help='Radiance image (PFM) seen by the scene camera.')
        target.add_argument('--image', help='Grayscale PNG, converted with --response and --exposure.')
        target.add_argument('--synthetic', type=float, nargs=4, metavar=('BASE', 'METALLIC', 'ROUGH', 'SPEC'),
                            help='Render the target from these coefficients instead of reading one.')
        parser.add_argument('--response', help='Response curve JSON for --image (default linear).')
        parser.add_argument('--exposure', type=float, default=1.0)
        parser.add_argument('--init', type=float, nargs=4, default=(0.5, 0.5, 0.5, 0.5))
        parser.add_argument('--free', nargs='+', choices=BSDF_FIELDS, default=list(BSDF_FIELDS))
        parser.add_argument('--epochs', type=int, default=200)
        parser.add_argument('--lr', type=float, default=0.05)
        parser.add_argument('--polish-iters', type=int, default=200, dest='polish_iters',
                            help='L-BFGS-B iterations after Adam (0 to skip).')
        parser.add_argument('--bounces', type=int, default=3)
        parser.add_argument('--min-pixels', type=int, default=500, dest='min_pixels')
        parser.add_argument('--out', default='bsdf_fit')

    def _target(self, scene, options):
        if options['synthetic']:
            truth = BsdfParams(*options['synthetic'])
            materials = [o.bsdf for o in scene.objects]
            materials[scene.target] = truth
            return render_radiance(scene.with_materials(materials), 'multi', options['bounces'])
        if options['target']:
            values = read_pfm(options['target'])
            finite = np.isfinite(values) & (values >= 0.0)
            return RadianceImage(np.where(finite, values, 0.0), np.full(values.shape, np.nan), finite)
        response = ResponseCurve.from_dict(read_json(options['response'])) if options['response'] \
            else ResponseCurve.linear()
        return radiance_from_image(IntensityImage(read_png(options['image'])), response, options['exposure'])

    def run(self, **options):
        scene = load_scene(options['scene'])
        target = self._target(scene, options)
        if target.values.shape != (scene.camera.height, scene.camera.width):
            raise ConfigurationError(
                f"Target is {target.values.shape[1]}x{target.values.shape[0]} but the scene camera is "
                f"{scene.camera.width}x{scene.camera.height}.")
        opts = FitOptions(lr=options['lr'], epochs=options['epochs'], free=tuple(options['free']),
                          min_pixels=options['min_pixels'], bounces=options['bounces'],
                          polish_iters=options['polish_iters'])
        self.stdout.write(self.style.SUCCESS(f"--- Fitting {', '.join(opts.free)} over {opts.epochs} epochs ---"))
        report = fit_bsdf(target, scene, BsdfParams(*options['init']), opts)

        out = Path(options['out'])
        write_json(out / 'fit.json', {**report.to_dict(), 'options': opts.to_dict()})
        pd.DataFrame({'epoch': range(1, len(report.loss_history) + 1), 'loss': report.loss_history,
                      'best': report.best_history}).to_csv(out / 'loss.csv', index=False, float_format='%.9g')

        materials = [o.bsdf for o in scene.objects]
        materials[scene.target] = report.params
        rendered = render_radiance(scene.with_materials(materials), 'multi', options['bounces'])
        error, stats = residual_map(target, rendered)
        write_pfm(out / 'residual.pfm', error)

        fitted = ', '.join(f"{k}={v:.3f}" for k, v in report.params.to_dict().items())
        self.success(f"Fitted {fitted} (loss {report.initial_loss:.3g} -> {report.best_loss:.3g}).")
        if report.polish_iterations:
            self.stdout.write(f"L-BFGS-B polish ran {report.polish_iterations} iterations after {report.epochs} epochs.")
        self.stdout.write(f"Residual mean {stats['mean']:.4g}, p95 {stats['p95']:.4g} over {stats['pixels']} pixels.")
        if options['synthetic']:
            worst = max(abs(a - b) for a, b in zip(report.params.as_array(), options['synthetic']))
            style = self.style.SUCCESS if worst <= 0.05 else self.style.WARNING
            self.stdout.write(style(f"Largest coefficient error: {worst:.4f}"))
        if not report.converged:
            self.warning("The fit did not converge within the epoch budget.")
