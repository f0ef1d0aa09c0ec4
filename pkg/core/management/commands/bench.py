from django.conf import settings

from core.config import load_run_config, resolve_seed
from core.management.base import CovlapCommand
from core.matrixio import write_json
from simbench.generators import MODEL_IDS, ModelSpec
from simbench.services import BenchmarkService, Estimator, parse_estimators


class Command(CovlapCommand):
    help = "Run seeded replications of a simulation model and report mean/sd of sp, se, rmse, mnorm, norm2."
    command_name = 'bench'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=int, choices=MODEL_IDS, required=True)
        parser.add_argument('--p', type=int, required=True)
        parser.add_argument('--n', type=int, required=True)
        parser.add_argument('--reps', type=int, required=True)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--config', default=None)
        parser.add_argument('--out', required=True)
        parser.add_argument('--estimators', default=None,
                            help=f"comma list of {', '.join(Estimator.values)} (default: all)")
        parser.add_argument('--jobs', type=int, default=settings.COVLAP['DEFAULT_JOBS'])

    def run(self, **options):
        config = load_run_config(options['config'])
        seed = resolve_seed(options['seed'], config.chain.seed)
        estimators = parse_estimators(options['estimators'] or ','.join(Estimator.values))
        spec = ModelSpec(options['model'], options['p'], options['n'], seed)
        service = BenchmarkService(spec, options['reps'], config.hyperparams_for(spec.p),
                                   config.chain_config(seed), estimators, jobs=max(1, options['jobs']))
        write_json(options['out'], service.run())
        return options['out']
