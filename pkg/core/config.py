"""
Run configuration: the JSON file given to fit/bench/lda, validated with
pydantic. Every field is optional; unknown keys are rejected.

    {"prior": {"q", "v", "lambda"},
     "chain": {"burn_in", "iterations", "seed", "selector", "init", "init_q", "warm_start", "use_cache"},
     "bcd": {"tol", "max_iter"},
     "zero_threshold": float,
     "estimator": "proposed-mpm" | "proposed-map" | "sample-cov",
     "lda": {"standardize", "train_counts"}}
"""
import json
import logging
import os
from typing import Literal, Optional, Tuple

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.exceptions import ConfigError
from objective.prior import Hyperparams
from sampler.services import ChainConfig

logger = logging.getLogger(__name__)

UINT64_MAX = (1 << 64) - 1


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid', populate_by_name=True)


class PriorSection(Section):
    q: Optional[float] = Field(None, gt=0.0, lt=1.0, description="prior edge inclusion probability")
    v: Optional[float] = Field(None, gt=0.0, description="slab standard deviation")
    lam: Optional[float] = Field(None, gt=0.0, alias='lambda', description="diagonal exponential rate x 2")


class ChainSection(Section):
    burn_in: int = Field(3000, ge=0)
    iterations: int = Field(12000, ge=1)
    seed: Optional[int] = Field(None, ge=0, le=UINT64_MAX)
    selector: Literal['mpm', 'map'] = 'mpm'
    init: Literal['empty', 'full', 'random'] = 'empty'
    init_q: Optional[float] = Field(None, ge=0.0, le=1.0)
    warm_start: bool = False
    use_cache: bool = Field(True, description="memoize structure scores; ignored when warm_start is set")


class BcdSection(Section):
    tol: Optional[float] = Field(None, gt=0.0)
    max_iter: Optional[int] = Field(None, ge=1)


class LdaSection(Section):
    standardize: bool = False
    train_counts: Optional[Tuple[int, int]] = None


class RunConfig(Section):
    prior: PriorSection = Field(default_factory=PriorSection)
    chain: ChainSection = Field(default_factory=ChainSection)
    bcd: BcdSection = Field(default_factory=BcdSection)
    zero_threshold: Optional[float] = Field(None, ge=0.0)
    estimator: Optional[Literal['proposed-mpm', 'proposed-map', 'sample-cov']] = None
    lda: LdaSection = Field(default_factory=LdaSection)

    def hyperparams_for(self, p):
        return Hyperparams.for_dimension(
            p,
            q=self.prior.q,
            v=self.prior.v,
            lam=self.prior.lam,
            zero_threshold=self.zero_threshold,
            bcd_tol=self.bcd.tol,
            bcd_max_iter=self.bcd.max_iter,
        )

    def chain_config(self, seed):
        return ChainConfig(
            burn_in=self.chain.burn_in,
            iterations=self.chain.iterations,
            seed=seed,
            selector=self.chain.selector,
            init=self.chain.init,
            init_q=self.chain.init_q,
            warm_start=self.chain.warm_start,
            use_cache=self.chain.use_cache,
        )

    def train_counts(self):
        return tuple(self.lda.train_counts or settings.COVLAP['LDA_TRAIN_COUNTS'])


def load_run_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding='utf-8') as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


def resolve_seed(flag=None, config_seed=None):
    """Seed precedence: command flag, then env COVLAP_SEED, then config, then 0."""
    if flag is not None:
        return _checked_seed(flag, 'flag')
    env_name = settings.COVLAP['SEED_ENV']
    env = os.environ.get(env_name)
    if env not in (None, ''):
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{env_name}={env!r} is not an integer") from None
        return _checked_seed(value, env_name)
    if config_seed is not None:
        return _checked_seed(config_seed, 'config')
    return 0


def _checked_seed(value, source):
    value = int(value)
    if not 0 <= value <= UINT64_MAX:
        raise ConfigError(f"seed from {source} must be a 64-bit unsigned integer, got {value}")
    return value
