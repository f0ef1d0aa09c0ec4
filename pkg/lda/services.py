"""
Linear discriminant analysis on top of the covariance estimators, and the
repeated stratified-split experiment on the breast-cancer (WDBC) data.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from core.exceptions import (CovlapError, DataFormatError, EmptyTestSet, InsufficientClassCount,
                             NotPositiveDefinite)
from core.services import new_run_id, run_replications
from simbench.generators import sample_cov
from simbench.services import AllReplicationsFailed, Estimator, estimate_all
from simbench.metrics import MetricSummary
from sampler.services import stream_seed
from symmat.matrices import as_array, inverse_pd

logger = logging.getLogger(__name__)

WDBC_FIELDS = 32
DIAGNOSIS = {'M': 1, 'B': 0}


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(f"features {self.features.shape} do not match {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def p(self):
        return int(self.features.shape[1])

    def class_counts(self):
        return int(np.sum(self.labels == 1)), int(np.sum(self.labels == 0))

    def subset(self, index):
        return LabeledDataset(self.features[index], self.labels[index])


def load_wdbc(path):
    """Rows "id,diagnosis,f1..f30"; M is class 1, B class 0."""
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False,
                            keep_default_na=False, na_values=[''])
    except FileNotFoundError as e:
        raise DataFormatError("file not found", path) from e
    except pd.errors.EmptyDataError as e:
        raise DataFormatError("file is empty", path) from e
    except pd.errors.ParserError as e:
        raise DataFormatError(f"cannot parse CSV: {e}", path) from e

    if frame.shape[1] != WDBC_FIELDS:
        raise DataFormatError(f"expected {WDBC_FIELDS} fields per line, found {frame.shape[1]}", path, 1)

    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0]) + 1
        raise DataFormatError(f"expected {WDBC_FIELDS} fields", path, line)

    diagnosis = frame[1].str.strip()
    bad = ~diagnosis.isin(list(DIAGNOSIS)).to_numpy()
    if bad.any():
        line = int(np.flatnonzero(bad)[0]) + 1
        raise DataFormatError(f"diagnosis must be M or B, got {diagnosis.iloc[line - 1]!r}", path, line)

    features = frame.iloc[:, 2:].apply(pd.to_numeric, errors='coerce')
    bad = features.isna().any(axis=1).to_numpy()
    if bad.any():
        line = int(np.flatnonzero(bad)[0]) + 1
        raise DataFormatError("non-numeric feature value", path, line)

    data = LabeledDataset(features.to_numpy(dtype=float), diagnosis.map(DIAGNOSIS).to_numpy(dtype=int))
    logger.info(f"Loaded {len(data)} rows from {path} (malignant={data.class_counts()[0]}, benign={data.class_counts()[1]})")
    return data


def stratified_split(data, train_counts, rng):
    """Draw m1 class-1 and m0 class-0 rows without replacement; the rest is the test set."""
    chosen = []
    for label, wanted in zip((1, 0), train_counts):
        members = np.flatnonzero(data.labels == label)
        if wanted < 0 or members.size < wanted:
            raise InsufficientClassCount(f"class {label} has {members.size} rows, {wanted} requested for training")
        chosen.append(rng.choice(members, size=wanted, replace=False))
    train = np.sort(np.concatenate(chosen))
    test = np.setdiff1d(np.arange(len(data)), train)
    return data.subset(train), data.subset(test)


@dataclass(frozen=True)
class LdaModel:
    mu0: np.ndarray
    mu1: np.ndarray
    omega_hat: object
    log_pi0: float
    log_pi1: float
    scale: np.ndarray
    sigma_hat: object = None
    estimator: str = Estimator.PROPOSED_MPM

    def discriminants(self, x):
        """Scores for class 0 and 1 of each row of x (already in model units)."""
        omega = as_array(self.omega_hat)
        scores = []
        for mu, log_pi in ((self.mu0, self.log_pi0), (self.mu1, self.log_pi1)):
            w = omega @ mu
            scores.append(x @ w - 0.5 * float(mu @ w) + log_pi)
        return np.stack(scores, axis=-1)


def _class_summary(train, standardize):
    if 0 in train.class_counts():
        raise InsufficientClassCount("both classes must be present in the training set")
    scale = np.ones(train.p)
    if standardize:
        scale = train.features.std(axis=0, ddof=1)
        scale[~(scale > 0.0)] = 1.0
    x = train.features / scale
    mu = np.stack([x[train.labels == c].mean(axis=0) for c in (0, 1)])
    pi1 = float(np.mean(train.labels == 1))
    return mu, x - mu[train.labels], scale, math.log(1.0 - pi1), math.log(pi1)


def fit_lda_models(train, h, cfg, estimators, standardize=False):
    """LdaModel per estimator from one pooled within-class covariance.

    The proposed estimators share one chain. A failing estimator maps to its
    exception instead of a model so the others still fit.
    """
    mu, centered, scale, log_pi0, log_pi1 = _class_summary(train, standardize)
    s = sample_cov(centered)
    proposed = [name for name in estimators if name != Estimator.SAMPLE_COV]
    groups = [group for group in (proposed, [name for name in estimators if name == Estimator.SAMPLE_COV]) if group]

    models = {}
    for group in groups:
        try:
            estimates = estimate_all(s, len(train), h, cfg, group)
        except CovlapError as e:
            models.update({name: e for name in group})
            continue
        for name, sigma_hat in estimates.items():
            try:
                omega_hat = inverse_pd(sigma_hat)
            except NotPositiveDefinite as e:
                models[name] = e
                continue
            models[name] = LdaModel(mu0=mu[0], mu1=mu[1], omega_hat=omega_hat, log_pi0=log_pi0,
                                    log_pi1=log_pi1, scale=scale, sigma_hat=sigma_hat, estimator=name)
    return {name: models[name] for name in estimators}


def fit_lda(train, h, cfg, estimator=Estimator.PROPOSED_MPM, standardize=False):
    model = fit_lda_models(train, h, cfg, (estimator,), standardize)[estimator]
    if isinstance(model, Exception):
        raise model
    return model


def predict_many(model, x):
    x = np.atleast_2d(np.asarray(x, dtype=float)) / model.scale
    scores = model.discriminants(x)
    return (scores[:, 1] > scores[:, 0]).astype(int)


def predict(model, x):
    """argmax of the two discriminant scores; a tie goes to class 0."""
    return int(predict_many(model, x)[0])


def error_rate(model, test):
    if len(test) == 0:
        raise EmptyTestSet("test set is empty")
    return float(np.mean(predict_many(model, test.features) != test.labels))


@dataclass
class LdaExperiment:
    data: LabeledDataset
    reps: int
    seed: int
    h: object
    cfg: object
    estimators: tuple = (Estimator.PROPOSED_MPM,)
    train_counts: tuple = (72, 119)
    standardize: bool = False
    jobs: int = 1
    run_id: Optional[str] = None

    def run_replication(self, r):
        rng = np.random.default_rng(stream_seed(self.seed, r))
        train, test = stratified_split(self.data, self.train_counts, rng)
        models = fit_lda_models(train, self.h, self.cfg.for_replication(r), self.estimators, self.standardize)
        out = {}
        for name, model in models.items():
            if isinstance(model, Exception):
                logger.warning(f"LDA replication {r + 1}: estimator {name} failed: {model}")
                out[name] = None
            else:
                out[name] = error_rate(model, test)
        return out

    def run(self):
        if self.reps < 1:
            raise ValueError(f"reps must be >= 1, got {self.reps}")
        outcomes = run_replications(self.run_replication, self.reps, self.jobs, self.run_id or new_run_id(),
                                    label='LDA replication')
        if all(isinstance(o, Exception) for o in outcomes):
            raise AllReplicationsFailed(f"all {self.reps} LDA replications failed; first error: {outcomes[0]}")
        per_estimator = {}
        for name in self.estimators:
            rates = [None if isinstance(o, Exception) else o[name] for o in outcomes]
            per_estimator[str(name)] = _rate_summary(rates)
        primary = per_estimator[str(self.estimators[0])]
        return {
            'reps': self.reps,
            'estimator': str(self.estimators[0]),
            'error_rate': primary['error_rate'],
            'per_rep': primary['per_rep'],
            'failures': primary['failures'],
            'standardize': self.standardize,
            'estimators': per_estimator,
        }


def _rate_summary(rates):
    done = [r for r in rates if r is not None]
    if done:
        sd = float(np.std(done, ddof=1)) if len(done) > 1 else 0.0
        summary = MetricSummary(float(np.mean(done)), sd).as_dict()
    else:
        summary = {'mean': None, 'sd': None}
    return {'error_rate': summary, 'per_rep': rates, 'failures': len(rates) - len(done)}


def run_lda_experiment(data, reps, seed, h, cfg, estimators=(Estimator.PROPOSED_MPM,),
                       train_counts=(72, 119), standardize=False, jobs=1):
    return LdaExperiment(data, reps, seed, h, cfg, tuple(estimators), tuple(train_counts), standardize, jobs).run()
