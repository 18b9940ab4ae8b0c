# core/management/commands/_base.py

import logging
import sys

from django.core.management.base import BaseCommand, CommandError

from core.config import RunConfig
from core.exceptions import ActivePoseError


class ActivePoseCommand(BaseCommand):
    """
    Base for the experiment commands.

    Library errors become CommandError with the matching exit code
    (1 config, 2 data, 3 numerical); argument errors exit with 1.
    """

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        default_error = parser.error

        def error(message):
            if parser.called_from_command_line:
                parser.print_usage(sys.stderr)
                parser.exit(1, f"{parser.prog}: error: {message}\n")
            default_error(message)

        parser.error = error
        return parser

    def add_config_arguments(self, parser):
        parser.add_argument('--config', help='YAML run config; flags below override its values.')
        parser.add_argument('--seed', type=int, help='Base random seed.')
        parser.add_argument('--out', help='Output directory.')
        parser.add_argument('--kind', help='Procedural object kind (l-bracket, cube, v-groove, sphere, glossy-part).')
        parser.add_argument('--material', help='Material preset (matte, glossy, chrome).')
        parser.add_argument('--n-jobs', type=int, dest='n_jobs', help='Parallel workers (-1 for all cores).')

    def load_config(self, options, **extra):
        overrides = {key: options.get(key) for key in ('seed', 'out', 'kind', 'material', 'n_jobs')}
        overrides.update(extra)
        return RunConfig.from_file(options.get('config'), overrides)

    def handle(self, *args, **options):
        if options.get('verbosity', 1) >= 2:
            logging.getLogger('core').setLevel(logging.DEBUG)
        try:
            return self.run(**options)
        except ActivePoseError as exc:
            raise CommandError(self.style.ERROR(f"{type(exc).__name__}: {exc}"), returncode=exc.exit_code) from exc

    def run(self, **options):
        raise NotImplementedError('subclasses of ActivePoseCommand must provide a run() method')

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))

    def warning(self, message):
        self.stdout.write(self.style.WARNING(message))
