import numpy as np

from core.config import resolve_seed
from core.management.base import CovlapCommand
from core.matrixio import write_matrix_csv
from sampler.services import stream_seed
from simbench.generators import MODEL_IDS, ModelSpec, gen_model, sample_mvn, truth_rng
from symmat.matrices import as_array


class Command(CovlapCommand):
    help = "Generate a covariance model and an n x p Gaussian sample from it."
    command_name = 'gen'

    def add_arguments(self, parser):
        parser.add_argument('--model', type=int, choices=MODEL_IDS, required=True)
        parser.add_argument('--p', type=int, required=True)
        parser.add_argument('--n', type=int, required=True)
        parser.add_argument('--seed', type=int, default=None)
        parser.add_argument('--out', required=True, help="data matrix CSV (n x p)")
        parser.add_argument('--truth', required=True, help="true covariance CSV (p x p)")

    def run(self, **options):
        seed = resolve_seed(options['seed'])
        spec = ModelSpec(options['model'], options['p'], options['n'], seed)
        truth = gen_model(spec, truth_rng(seed))
        x = sample_mvn(spec.n, truth, np.random.default_rng(stream_seed(seed, 0)))
        write_matrix_csv(options['truth'], as_array(truth))
        write_matrix_csv(options['out'], x)
        return options['out']
