#!/usr/bin/env python
"""
covlap launcher.

    covlap gen --model 3 --p 10 --n 200 --seed 7 --out x.csv --truth s0.csv
    covlap fit --data x.csv --config run.json --out fit.json
    covlap bench --model 3 --p 30 --n 120 --reps 10 --seed 1 --config run.json --out bench.json
    covlap lda --wdbc wdbc.data --reps 10 --seed 1 --config run.json --out lda.json

Each command is a Django management command; this script only prepares the
run-record database on first launch and forwards the arguments.
"""
import os
import sys

COMMANDS = ('gen', 'fit', 'bench', 'lda')


def prepare_database():
    # First-time setup: create the run-record tables quietly
    from django.conf import settings
    from django.core.management import call_command

    if not os.path.exists(settings.DATABASES['default']['NAME']):
        call_command('migrate', verbosity=0, interactive=False)


def main(argv=None):
    argv = list(sys.argv if argv is None else argv)
    base_dir = os.path.dirname(os.path.abspath(__file__))
    if base_dir not in sys.path:
        sys.path.insert(0, base_dir)
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')

    import django
    from django.core.management import execute_from_command_line

    if len(argv) < 2 or argv[1] not in COMMANDS:
        sys.stderr.write(f"usage: covlap {{{','.join(COMMANDS)}}} [options]\n")
        sys.exit(2)

    django.setup()
    try:
        prepare_database()
    except Exception as e:
        # Run records are best-effort; the commands work without them
        sys.stderr.write(f"WARNING covlap: run-record database unavailable ({e})\n")

    execute_from_command_line(['covlap', *argv[1:]])


if __name__ == '__main__':
    main()
