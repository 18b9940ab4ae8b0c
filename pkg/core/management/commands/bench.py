# core/management/commands/bench.py

import pandas as pd
from django.db.utils import OperationalError

from core.harness import run_experiment
from core.models import Experiment
from core.nbv import POLICIES

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Runs a seeded benchmark (active policies or passive multi-view refinement) and writes CSV reports.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--seeds', type=int, help='Number of seeds, starting at --seed.')
        parser.add_argument('--kinds', nargs='+', help='Object kinds to benchmark (overrides --kind).')
        parser.add_argument('--policy', action='append', choices=POLICIES, dest='policies',
                            help='Policy to compare; repeat for several.')
        parser.add_argument('--mode', choices=('active', 'passive'))
        parser.add_argument('--outliers', type=float, dest='outlier_fraction')
        parser.add_argument('--record', action='store_true', help='Store the run in the database.')
        parser.add_argument('--name', default='', help='Experiment name used with --record.')

    def run(self, **options):
        config = self.load_config(options, **{key: options.get(key) for key in
                                             ('seeds', 'kinds', 'policies', 'mode', 'outlier_fraction')})
        self.stdout.write(self.style.SUCCESS(
            f"--- {config.mode} benchmark: {', '.join(config.all_kinds)} x {config.seeds} seeds ---"))
        report = run_experiment(config, progress=options.get('verbosity', 1) > 0)

        curve = pd.DataFrame(report['curve'])
        if not curve.empty:
            self.stdout.write(curve[curve['kind'] == 'all'].to_string(index=False, float_format='%.1f'))
        if report['failed']:
            self.warning(f"{report['failed']} of {report['trials']} trials failed; see summary.csv.")
        if report['excluded']:
            self.warning(f"{report['excluded']} trials excluded by the visibility rule.")
        if options['record']:
            try:
                experiment = Experiment.objects.record(config, report, options['name'])
                self.success(f"Stored as experiment {experiment.pk}.")
            except OperationalError as exc:
                self.warning(f"Could not store the run ({exc}); run 'python manage.py migrate' first.")
        self.success(f"Reports written to {report['out']}.")
