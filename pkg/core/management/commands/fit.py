import json
import os

from core.config import load_run_config, resolve_seed
from core.management.base import CovlapCommand
from core.matrixio import read_matrix_csv, write_json, write_matrix_csv
from sampler.services import estimate
from symmat.matrices import as_array


def sigma_path_for(out):
    stem, ext = os.path.splitext(os.fspath(out))
    return f"{stem if ext.lower() == '.json' else stem + ext}.sigma.csv"


class Command(CovlapCommand):
    help = "Sample structures for a data matrix and write the selected model and its covariance."
    command_name = 'fit'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True, help="data matrix CSV (n x p)")
        parser.add_argument('--config', default=None, help="run configuration JSON")
        parser.add_argument('--out', required=True, help="result JSON")
        parser.add_argument('--seed', type=int, default=None)

    def error_message(self, error):
        return json.dumps({'error': type(error).__name__, 'message': str(error)})

    def run(self, **options):
        config = load_run_config(options['config'])
        x = read_matrix_csv(options['data'])
        h = config.hyperparams_for(x.shape[1])
        chain = config.chain_config(resolve_seed(options['seed'], config.chain.seed))
        result = estimate(x, h, chain)

        sigma_csv = sigma_path_for(options['out'])
        write_matrix_csv(sigma_csv, as_array(result.sigma_hat))
        write_json(options['out'], result.as_dict(sigma_csv=sigma_csv))
        return options['out']
