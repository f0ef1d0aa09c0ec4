"""
Replication benchmark: fixed truth per (model, p, seed), fresh data per
replication, every estimator scored on the same draw.
"""
import logging
from functools import cached_property

import numpy as np
from django.db import models

from core.exceptions import CovlapError
from core.services import new_run_id, run_replications
from laplace.approximation import ScoreCache
from sampler.services import Selector, finalize, mh_run, stream_seed
from simbench.generators import gen_model, sample_cov, sample_mvn, truth_rng
from simbench.metrics import METRICS, all_metrics, summarize

logger = logging.getLogger(__name__)


class Estimator(models.TextChoices):
    PROPOSED_MPM = 'proposed-mpm', 'Proposed (MPM)'
    PROPOSED_MAP = 'proposed-map', 'Proposed (MAP)'
    SAMPLE_COV = 'sample-cov', 'Sample covariance'


PROPOSED_SELECTORS = {
    Estimator.PROPOSED_MPM: Selector.MPM,
    Estimator.PROPOSED_MAP: Selector.MAP,
}


class AllReplicationsFailed(CovlapError):
    pass


def parse_estimators(text):
    names = [part.strip() for part in str(text).split(',') if part.strip()]
    unknown = [name for name in names if name not in Estimator.values]
    if not names or unknown:
        raise ValueError(f"estimators must be a comma list of {', '.join(Estimator.values)}; got {text!r}")
    return tuple(dict.fromkeys(names))


def estimate_all(s, n, h, cfg, estimators):
    """Covariance estimates for each estimator from one sample covariance.

    The proposed estimators share one chain; each selector only changes Z~.
    """
    out = {}
    selectors = [PROPOSED_SELECTORS[e] for e in estimators if e in PROPOSED_SELECTORS]
    if selectors:
        cache = ScoreCache() if cfg.use_cache else None
        trace = mh_run(s, h, cfg, n, cache=cache)
        for estimator in estimators:
            if estimator in PROPOSED_SELECTORS:
                out[estimator] = finalize(trace, s, n, h, cfg, PROPOSED_SELECTORS[estimator], cache=cache).sigma_hat
    if Estimator.SAMPLE_COV in estimators:
        out[Estimator.SAMPLE_COV] = s
    return {e: out[e] for e in estimators}


class BenchmarkService:
    def __init__(self, spec, reps, h, cfg, estimators, jobs=1, run_id=None):
        if reps < 1:
            raise ValueError(f"reps must be >= 1, got {reps}")
        self.spec = spec
        self.reps = reps
        self.h = h
        self.cfg = cfg
        self.estimators = tuple(estimators)
        self.jobs = jobs
        self.run_id = run_id or new_run_id()

    @cached_property
    def truth(self):
        return gen_model(self.spec, truth_rng(self.spec.seed))

    def run_replication(self, r):
        rng = np.random.default_rng(stream_seed(self.spec.seed, r))
        x = sample_mvn(self.spec.n, self.truth, rng)
        s = sample_cov(x)
        estimates = estimate_all(s, self.spec.n, self.h, self.cfg.for_replication(r), self.estimators)
        return [
            {'rep': r, 'estimator': str(name), **all_metrics(sigma_hat, self.truth, self.h.zero_threshold)}
            for name, sigma_hat in estimates.items()
        ]

    def run(self):
        logger.info(f"Benchmark {self.run_id}: model {self.spec.model_id}, p={self.spec.p}, "
                    f"n={self.spec.n}, reps={self.reps}, estimators={','.join(self.estimators)}")
        _ = self.truth
        outcomes = run_replications(self.run_replication, self.reps, self.jobs, self.run_id)
        records = [row for outcome in outcomes if not isinstance(outcome, Exception) for row in outcome]
        failures = sum(isinstance(outcome, Exception) for outcome in outcomes)
        if failures == self.reps:
            raise AllReplicationsFailed(f"all {self.reps} replications failed; first error: {outcomes[0]}")
        return self.report(records, failures)

    def report(self, records, failures):
        summary = summarize(records)
        return {
            'model': self.spec.model_id,
            'p': self.spec.p,
            'n': self.spec.n,
            'reps': self.reps,
            'estimators': {
                str(name): {metric: summary[name][metric].as_dict() for metric in METRICS}
                for name in self.estimators if name in summary
            },
            'failures': failures,
        }


def run_benchmark(spec, reps, h, cfg, estimators, jobs=1):
    return BenchmarkService(spec, reps, h, cfg, estimators, jobs).run()
