import logging
import os

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import ConfigError, CovlapError
from core.services import track_run

logger = logging.getLogger(__name__)


class CovlapCommand(BaseCommand):
    """Shared plumbing: run record, exit codes and option echo.

    Subclasses set `command_name` and implement `run(**options)`, returning
    the main output path.
    """
    command_name = ''
    requires_system_checks = []
    requires_migrations_checks = False

    def recorded_arguments(self, options):
        skip = {'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color', 'skip_checks'}
        return {k: (os.fspath(v) if isinstance(v, os.PathLike) else v)
                for k, v in options.items() if k not in skip and v is not None}

    def error_message(self, error):
        return str(error)

    def handle(self, *args, **options):
        with track_run(self.command_name, self.recorded_arguments(options), options.get('out') or ''):
            try:
                out = self.run(**options)
            except CovlapError as e:
                raise CommandError(self.error_message(e), returncode=e.exit_code) from e
            except ValueError as e:
                error = ConfigError(str(e))
                raise CommandError(self.error_message(error), returncode=error.exit_code) from e
        logger.info(f"{self.command_name}: wrote {out}")

    def run(self, **options):
        raise NotImplementedError
