# core/management/commands/eval.py

from pathlib import Path

from core.exceptions import DataError
from core.harness import METRICS, evaluate_detection, load_estimates
from core.io import write_json

from ._base import ActivePoseCommand


class Command(ActivePoseCommand):
    help = 'Computes detection rates of pose estimates against ground truth.'

    def add_arguments(self, parser):
        parser.add_argument('estimates', help='JSONL with "estimate" and "truth" 4x4 matrices per line.')
        parser.add_argument('--metric', action='append', choices=sorted(METRICS),
                            help='Threshold pair; repeat for several (default both).')
        parser.add_argument('--out', help='Optional JSON file for the metrics.')

    def run(self, **options):
        try:
            pairs = load_estimates(options['estimates'])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"Cannot read estimates from {options['estimates']}: {exc}") from exc
        if not pairs:
            raise DataError(f"{options['estimates']} contains no estimates.")

        results = []
        for name in options['metric'] or list(METRICS):
            metric = evaluate_detection(pairs, *METRICS[name])
            results.append({'metric': name, **metric.to_dict()})
            self.stdout.write(f"{metric.label}: {metric.correct}/{metric.total} = {metric.rate:.1f}%")
        if options['out']:
            write_json(Path(options['out']), {'estimates': options['estimates'], 'metrics': results})
        self.success("Evaluation complete.")
