import logging
from typing import NamedTuple

import numpy as np
import pandas as pd

from core.exceptions import DimensionMismatch
from symmat.matrices import as_array, norms, spectral_norm

logger = logging.getLogger(__name__)

METRICS = ('sp', 'se', 'rmse', 'mnorm', 'norm2')

# truth entries at or below this are structural zeros (Model 5 is computed by inversion)
TRUTH_ZERO_TOL = 1e-10


class StructureMetrics(NamedTuple):
    sp: float
    se: float


class LossMetrics(NamedTuple):
    rmse: float
    mnorm: float
    norm2: float


class MetricSummary(NamedTuple):
    mean: float
    sd: float

    def as_dict(self):
        return {'mean': self.mean, 'sd': self.sd}


def _pair(sigma_hat, sigma0):
    a, b = as_array(sigma_hat), as_array(sigma0)
    if a.shape != b.shape:
        raise DimensionMismatch(f"estimate is {a.shape}, truth is {b.shape}")
    return a, b


def _ratio(hits, total):
    return 1.0 if total == 0 else hits / total


def structure_metrics(sigma_hat, sigma0, threshold=0.001):
    """Specificity over true zero pairs, sensitivity over true nonzero pairs."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    hat, truth = _pair(sigma_hat, sigma0)
    rows, cols = np.triu_indices(hat.shape[0], 1)
    true_nonzero = np.abs(truth[rows, cols]) > TRUTH_ZERO_TOL
    est_nonzero = np.abs(hat[rows, cols]) > threshold
    se = _ratio(int(np.sum(true_nonzero & est_nonzero)), int(np.sum(true_nonzero)))
    sp = _ratio(int(np.sum(~true_nonzero & ~est_nonzero)), int(np.sum(~true_nonzero)))
    return StructureMetrics(sp=sp, se=se)


def loss_metrics(sigma_hat, sigma0):
    hat, truth = _pair(sigma_hat, sigma0)
    diff = hat - truth
    frob, max_abs = norms(diff)
    return LossMetrics(rmse=frob / hat.shape[0], mnorm=max_abs, norm2=spectral_norm(diff).value)


def all_metrics(sigma_hat, sigma0, threshold=0.001):
    return {**structure_metrics(sigma_hat, sigma0, threshold)._asdict(),
            **loss_metrics(sigma_hat, sigma0)._asdict()}


def summarize(records, group='estimator', columns=METRICS):
    """Mean and sample sd (ddof=1; 0 for a single record) per group and column."""
    frame = pd.DataFrame.from_records(records)
    out = {}
    if frame.empty:
        return out
    for name, block in frame.groupby(group, sort=False):
        stats = {}
        for column in columns:
            values = block[column].astype(float)
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            stats[column] = MetricSummary(float(values.mean()), sd)
        out[name] = stats
    return out
