# core/tests/test_commands.py

import tempfile
from contextlib import redirect_stderr
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import CommandError, call_command
from django.test import SimpleTestCase, TestCase, override_settings

from core.calib import ResponseCurve
from core.config import write_yaml
from core.geometry import Pose
from core.io import read_json, read_jsonl, write_jsonl, write_png
from core.management.commands.eval import Command as EvalCommand
from core.models import Experiment

SMALL_RUN = {
    'kind': 'l-bracket', 'material': 'matte', 'clutter': False, 'seed': 2, 'seeds': 1, 'candidates': 6,
    'perturb_trans': 3.0, 'perturb_rot_deg': 3.0, 'stride': 1, 'voxel': 2.0, 'max_views': 2,
    'passive_views': [1], 'camera': {'width': 64, 'height': 48, 'fx': 140.0, 'fy': 140.0, 'baseline': 60.0},
}


class CommandMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        override = override_settings(SDF_CACHE_DIR=self.root / 'sdf')
        override.enable()
        self.addCleanup(override.disable)

    def call(self, *args):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO())
        return out.getvalue()

    def small_config(self, **extra):
        path = self.root / 'run.yaml'
        write_yaml(path, {**SMALL_RUN, **extra})
        return str(path)


class EvalCommandTests(CommandMixin, SimpleTestCase):
    def write_estimates(self):
        truth = Pose.identity().as_matrix().tolist()
        near = Pose(Pose.identity().rotation, [1.0, 0.0, 0.0]).as_matrix().tolist()
        far = Pose(Pose.identity().rotation, [0.0, 3.0, 0.0]).as_matrix().tolist()
        path = self.root / 'estimates.jsonl'
        write_jsonl(path, [{'estimate': near, 'truth': truth}, {'estimate': far, 'truth': truth}])
        return str(path)

    def test_reports_both_metrics(self):
        output = self.call('eval', self.write_estimates(), '--out', str(self.root / 'metrics.json'))
        self.assertIn('(5,5): 2/2 = 100.0%', output)
        self.assertIn('(2,2): 1/2 = 50.0%', output)
        metrics = read_json(self.root / 'metrics.json')['metrics']
        self.assertEqual([m['metric'] for m in metrics], ['5,5', '2,2'])

    def test_single_metric(self):
        output = self.call('eval', self.write_estimates(), '--metric', '2,2')
        self.assertNotIn('(5,5)', output)

    def test_missing_file_is_a_data_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call('eval', str(self.root / 'missing.jsonl'))
        self.assertEqual(cm.exception.returncode, 2)

    def test_empty_file(self):
        (self.root / 'empty.jsonl').write_text('')
        with self.assertRaises(CommandError) as cm:
            self.call('eval', str(self.root / 'empty.jsonl'))
        self.assertEqual(cm.exception.returncode, 2)

    def test_exit_codes_from_the_command_line(self):
        with redirect_stderr(StringIO()), self.assertRaises(SystemExit) as cm:
            EvalCommand().run_from_argv(['manage.py', 'eval', self.write_estimates(), '--metric', '9,9'])
        self.assertEqual(cm.exception.code, 1)
        with redirect_stderr(StringIO()), self.assertRaises(SystemExit) as cm:
            EvalCommand().run_from_argv(['manage.py', 'eval', str(self.root / 'missing.jsonl')])
        self.assertEqual(cm.exception.code, 2)


class SimulateRefineTests(CommandMixin, SimpleTestCase):
    def test_simulate_then_refine(self):
        dataset = self.root / 'dataset'
        self.call('simulate', '--config', self.small_config(), '--out', str(dataset), '--views', '3', '--no-noise')
        for name in ('scene.yaml', 'init.json', 'camera.json', 'truth.json'):
            self.assertTrue((dataset / name).exists(), name)
        self.assertEqual(len(list((dataset / 'views').iterdir())), 3)

        out = self.root / 'refine.json'
        self.call('refine', str(dataset), '--method', 'both', '--voxel', '2', '--out', str(out))
        results = {r['method']: r for r in read_json(out)['results']}
        self.assertEqual(set(results), {'sdf', 'icp'})
        self.assertLess(results['sdf']['trans_err'], 2.0)
        self.assertLess(results['sdf']['rot_err'], 2.0)
        self.assertEqual(len(results['sdf']['covariance']), 36)

    def test_refine_without_an_initial_pose(self):
        dataset = self.root / 'dataset'
        self.call('simulate', '--config', self.small_config(), '--out', str(dataset), '--views', '1', '--no-noise')
        (dataset / 'init.json').unlink()
        with self.assertRaises(CommandError) as cm:
            self.call('refine', str(dataset), '--kind', 'l-bracket')
        self.assertEqual(cm.exception.returncode, 1)

    def test_fit_bsdf_on_a_simulated_scene(self):
        dataset = self.root / 'dataset'
        self.call('simulate', '--config', self.small_config(), '--out', str(dataset), '--views', '1', '--no-noise')
        out = self.root / 'fit'
        output = self.call('fit_bsdf', '--scene', str(dataset / 'scene.yaml'), '--synthetic', '0.6', '0.0', '0.4', '0.5',
                           '--init', '0.5', '0.0', '0.5', '0.5', '--free', 'base_color', 'roughness',
                           '--epochs', '20', '--min-pixels', '50', '--out', str(out))
        self.assertIn('Largest coefficient error', output)
        report = read_json(out / 'fit.json')
        self.assertEqual(report['options']['polish_iters'], 200)
        self.assertEqual(len(report['loss_history']), 20)
        self.assertAlmostEqual(report['params']['base_color'], 0.6, delta=0.05)
        self.assertTrue((out / 'loss.csv').exists())

    def test_refine_missing_dataset(self):
        with self.assertRaises(CommandError) as cm:
            self.call('refine', str(self.root / 'nowhere'))
        self.assertEqual(cm.exception.returncode, 2)


class NbvCommandTests(CommandMixin, SimpleTestCase):
    def test_random_policy_writes_a_trajectory(self):
        out = self.root / 'nbv'
        self.call('nbv', '--config', self.small_config(), '--policy', 'random', '--out', str(out))
        steps = read_jsonl(out / 'trajectory.jsonl')
        self.assertGreaterEqual(len(steps), 1)
        self.assertLessEqual(len(steps), 2)
        self.assertTrue((out / 'steps.csv').exists())
        self.assertTrue((out / 'config.yaml').exists())

    def test_bad_config_is_a_configuration_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call('nbv', '--config', self.small_config(max_views=0))
        self.assertEqual(cm.exception.returncode, 1)


class CalibrateResponseCommandTests(CommandMixin, SimpleTestCase):
    def test_synthetic_stack(self):
        out = self.root / 'response.json'
        output = self.call('calibrate_response', '--synthetic-gamma', '2.2', '--out', str(out))
        self.assertIn('RMS log-exposure error', output)
        self.assertEqual(len(read_json(out)['log_exposure']), 256)

    def test_needs_images_or_synthetic(self):
        with self.assertRaises(CommandError) as cm:
            self.call('calibrate_response')
        self.assertEqual(cm.exception.returncode, 1)

    def _write_stack(self):
        curve = ResponseCurve.linear()
        irradiance = np.logspace(-4.0, 0.0, 64 * 64).reshape(64, 64)
        exposures = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
        names = []
        for i, dt in enumerate(exposures):
            names.append(f'shot_{i}.png')
            write_png(self.root / 'stack' / names[-1], curve.to_intensity(irradiance * dt))
        return names, exposures

    def test_exposure_table_names_the_images(self):
        names, exposures = self._write_stack()
        table = self.root / 'stack' / 'exposures.csv'
        pd.DataFrame({'image': names, 'exposure': exposures}).to_csv(table, index=False)
        out = self.root / 'response.json'
        output = self.call('calibrate_response', '--exposure-csv', str(table), '--out', str(out))
        self.assertIn('Response curve written', output)
        self.assertEqual(len(read_json(out)['log_exposure']), 256)

    def test_exposure_table_for_listed_images(self):
        names, exposures = self._write_stack()
        table = self.root / 'times.csv'
        pd.DataFrame({'exposure': exposures}).to_csv(table, index=False)
        out = self.root / 'response.json'
        self.call('calibrate_response', *[str(self.root / 'stack' / n) for n in names],
                  '--exposure-csv', str(table), '--out', str(out))
        self.assertTrue(out.exists())

    def test_exposure_table_needs_an_exposure_column(self):
        table = self.root / 'times.csv'
        pd.DataFrame({'time': [1.0, 2.0, 4.0]}).to_csv(table, index=False)
        with self.assertRaises(CommandError) as cm:
            self.call('calibrate_response', '--exposure-csv', str(table))
        self.assertEqual(cm.exception.returncode, 1)


class BenchCommandTests(CommandMixin, TestCase):
    def test_passive_bench_is_recorded(self):
        out = self.root / 'bench'
        output = self.call('bench', '--config', self.small_config(), '--mode', 'passive', '--out', str(out),
                           '--record', '--name', 'smoke', '--verbosity', '0')
        self.assertIn('Stored as experiment', output)
        experiment = Experiment.objects.get(name='smoke')
        self.assertEqual(experiment.mode, 'passive')
        self.assertEqual(set(experiment.trials.values_list('policy', flat=True)), {'initial', 'sdf', 'icp'})
        self.assertTrue((out / 'curve.csv').exists())
