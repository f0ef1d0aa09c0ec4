from django.conf import settings

from core.config import load_run_config, resolve_seed
from core.management.base import CovlapCommand
from core.matrixio import write_json
from lda.services import LdaExperiment, load_wdbc
from simbench.services import Estimator, parse_estimators


class Command(CovlapCommand):
    help = "Repeated stratified splits of the WDBC data; reports the LDA classification error rate."
    command_name = 'lda'

    def add_arguments(self, parser):
        parser.add_argument('--wdbc', required=True, help="WDBC CSV: id,diagnosis,f1..f30")
        parser.add_argument('--reps', type=int, default=10)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--config', default=None)
        parser.add_argument('--out', required=True)
        parser.add_argument('--estimator', default=None,
                            help=f"one or a comma list of {', '.join(Estimator.values)}")
        parser.add_argument('--standardize', action='store_true', default=None,
                            help="scale features to unit training variance")
        parser.add_argument('--jobs', type=int, default=settings.COVLAP['DEFAULT_JOBS'])

    def run(self, **options):
        config = load_run_config(options['config'])
        seed = resolve_seed(options['seed'], config.chain.seed)
        estimators = parse_estimators(options['estimator'] or config.estimator or Estimator.PROPOSED_MPM)
        data = load_wdbc(options['wdbc'])
        standardize = config.lda.standardize if options['standardize'] is None else options['standardize']
        experiment = LdaExperiment(
            data=data,
            reps=options['reps'],
            seed=seed,
            h=config.hyperparams_for(data.p),
            cfg=config.chain_config(seed),
            estimators=estimators,
            train_counts=config.train_counts(),
            standardize=standardize,
            jobs=max(1, options['jobs']),
        )
        write_json(options['out'], experiment.run())
        return options['out']
