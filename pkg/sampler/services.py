"""
Metropolis-Hastings over covariance structures, model selection, and the
estimate pipeline (chain, select Z~, then the conditional posterior mode).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from django.db import models

from bcd.solver import solve
from core.exceptions import (DimensionMismatch, InfeasibleInitialModel, InfeasibleModel,
                             NonpositiveU, NotPositiveDefinite)
from laplace.approximation import ScoreCache, log_model_prob
from objective.prior import EdgeSet
from simbench.generators import sample_cov
from symmat.matrices import as_array

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


class Selector(models.TextChoices):
    MPM = 'mpm', 'Median probability model'
    MAP = 'map', 'Maximum a posteriori'


class InitStrategy(models.TextChoices):
    EMPTY = 'empty', 'Empty'
    FULL = 'full', 'Full'
    RANDOM = 'random', 'Random'


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 3000
    iterations: int = 12000
    seed: int = 0
    selector: str = Selector.MPM
    init: str = InitStrategy.EMPTY
    init_q: Optional[float] = None   # inclusion probability for init='random'; defaults to the prior q
    warm_start: bool = False
    use_cache: bool = True   # ignored when warm_start is set; every visit is solved afresh

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 <= self.seed <= SEED_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.selector not in Selector.values:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.init not in InitStrategy.values:
            raise ValueError(f"unknown init strategy {self.init!r}")
        if self.init_q is not None and not 0.0 <= self.init_q <= 1.0:
            raise ValueError(f"init_q must lie in [0, 1], got {self.init_q}")

    def for_replication(self, r):
        return replace(self, seed=stream_seed(self.seed, r))


def stream_seed(seed, r):
    return (int(seed) ^ int(r)) & SEED_MASK


class ChainSample(NamedTuple):
    z: EdgeSet
    log_prob: float
    accepted: bool


@dataclass(frozen=True)
class ChainTrace:
    dim: int
    samples: tuple
    acceptance_rate: float
    inclusion_freq: np.ndarray
    evaluations: int = 0
    cache_hits: int = 0

    def visited(self):
        """Distinct visited structures with their scores, in first-visit order."""
        seen = {}
        for sample in self.samples:
            seen.setdefault(sample.z.key, sample)
        return list(seen.values())


def propose(z, rng):
    """Flip one uniformly chosen pair."""
    if z.dim < 2:
        raise DimensionMismatch("proposals need at least two variables")
    return z.flip(int(rng.integers(z.size)))


def accept_move(current_log_prob, candidate_log_prob, u):
    """Metropolis rule with alpha = min(1, exp(candidate - current)); -inf is always rejected."""
    if candidate_log_prob == -math.inf:
        return False
    log_alpha = candidate_log_prob - current_log_prob
    return log_alpha >= 0.0 or u < math.exp(log_alpha)


def initial_structure(p, cfg, h, rng):
    if cfg.init == InitStrategy.FULL:
        return EdgeSet.full(p)
    if cfg.init == InitStrategy.RANDOM:
        q = h.q if cfg.init_q is None else cfg.init_q
        return EdgeSet(p, rng.random(p * (p - 1) // 2) < q)
    return EdgeSet.empty(p)


def mh_run(s, h, cfg, n, cache=None):
    """Run burn_in + iterations single-flip steps; keep the post-burn-in samples.

    Every step draws the flip index then the uniform, accepted or not, so the
    trace depends only on the seed.
    """
    s = as_array(s)
    p = s.shape[0]
    rng = np.random.default_rng(cfg.seed)
    if cfg.warm_start:
        # a warm-started score depends on the state it started from
        cache = None
    elif cache is None and cfg.use_cache:
        cache = ScoreCache()
    evaluations = 0

    def score(z, start=None):
        nonlocal evaluations
        evaluations += 1
        return log_model_prob(z, s, h, n, cache=cache, start=start)

    current = initial_structure(p, cfg, h, rng)
    current_score = score(current)
    if not current_score.feasible:
        logger.warning(f"Initial structure with {current.count()} edges is infeasible; falling back to the empty structure")
        current = EdgeSet.empty(p)
        current_score = score(current)
        if not current_score.feasible:
            raise InfeasibleInitialModel(f"empty structure is infeasible: {current_score.reason}")

    if p < 2:
        samples = tuple(ChainSample(current, current_score.log_prob, False) for _ in range(cfg.iterations))
        return ChainTrace(dim=p, samples=samples, acceptance_rate=0.0,
                          inclusion_freq=np.zeros(0), evaluations=evaluations)

    total = cfg.burn_in + cfg.iterations
    samples = []
    bit_sums = np.zeros(current.size)
    accepted_count = 0
    for step in range(total):
        candidate = propose(current, rng)
        u = rng.random()
        start = current_score.sigma_star if cfg.warm_start else None
        candidate_score = score(candidate, start=start)

        accepted = candidate_score.feasible and accept_move(current_score.log_prob, candidate_score.log_prob, u)
        if accepted:
            current, current_score = candidate, candidate_score

        if step >= cfg.burn_in:
            samples.append(ChainSample(current, current_score.log_prob, accepted))
            bit_sums += current.bits
            accepted_count += accepted
        if (step + 1) % 1000 == 0:
            logger.debug(f"step {step + 1}/{total}: edges={current.count()} log_prob={current_score.log_prob!r}")

    trace = ChainTrace(
        dim=p,
        samples=tuple(samples),
        acceptance_rate=accepted_count / cfg.iterations,
        inclusion_freq=bit_sums / cfg.iterations,
        evaluations=evaluations,
        cache_hits=cache.hits if cache is not None else 0,
    )
    logger.info(f"Chain finished: p={p}, acceptance={trace.acceptance_rate:.3f}, "
                f"distinct models={len(cache) if cache is not None else 'n/a'}")
    return trace


def select_mpm(trace):
    """Edges whose inclusion frequency is strictly above one half."""
    return EdgeSet(trace.dim, np.asarray(trace.inclusion_freq) > 0.5)


def select_map(trace):
    """Highest-scoring visited model; ties go to fewer edges, then smaller bit pattern."""
    if not trace.samples:
        raise ValueError("empty trace")
    best = min(trace.visited(), key=lambda sample: (-sample.log_prob, sample.z.count(), tuple(sample.z.as_list())))
    return best.z


def select(trace, selector):
    if selector == Selector.MAP:
        return select_map(trace)
    return select_mpm(trace)


@dataclass(frozen=True)
class FitResult:
    z: EdgeSet
    selector: str
    log_model_prob: float
    sigma_hat: object
    objective: float
    bcd_iterations: int
    bcd_converged: bool
    trace: ChainTrace
    hyperparams: object
    chain: ChainConfig
    extra: dict = field(default_factory=dict)

    def as_dict(self, sigma_csv=None):
        return {
            'z': self.z.as_list(),
            'selector': str(self.selector),
            'log_model_prob': self.log_model_prob,
            'acceptance_rate': self.trace.acceptance_rate,
            'inclusion_freq': [float(f) for f in self.trace.inclusion_freq],
            'sigma_csv': sigma_csv,
            'objective': self.objective,
            'bcd_iterations': self.bcd_iterations,
            'bcd_converged': self.bcd_converged,
            'config': {
                'prior': self.hyperparams.as_dict(),
                'chain': {
                    'burn_in': self.chain.burn_in,
                    'iterations': self.chain.iterations,
                    'seed': self.chain.seed,
                    'selector': str(self.chain.selector),
                    'init': str(self.chain.init),
                    'warm_start': self.chain.warm_start,
                    'use_cache': self.chain.use_cache,
                },
            },
        }


def finalize(trace, s, n, h, cfg, selector=None, cache=None):
    """Select Z~ from an existing trace and solve for its mode; never reruns the chain."""
    selector = selector or cfg.selector
    z = select(trace, selector)
    try:
        result = solve(s, z, h, n)
    except (NonpositiveU, NotPositiveDefinite) as e:
        raise InfeasibleModel(f"selected {selector} structure has no PD mode: {e}") from e
    score = log_model_prob(z, s, h, n, cache=cache)
    return FitResult(
        z=z,
        selector=selector,
        log_model_prob=score.log_prob,
        sigma_hat=result.sigma_star,
        objective=result.objective,
        bcd_iterations=result.iterations,
        bcd_converged=result.converged,
        trace=trace,
        hyperparams=h,
        chain=cfg,
    )


def estimate_from_cov(s, n, h, cfg):
    cache = ScoreCache() if cfg.use_cache else None
    trace = mh_run(s, h, cfg, n, cache=cache)
    return finalize(trace, s, n, h, cfg, cache=cache)


def estimate(x, h, cfg):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionMismatch(f"need an n x p data matrix with n >= 2, got shape {x.shape}")
    return estimate_from_cov(sample_cov(x), x.shape[0], h, cfg)
