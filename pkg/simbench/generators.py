"""
Synthetic covariance models and Gaussian data.

    1  random sparse: pairs nonzero w.p. 0.02 with value +-1, diagonal tuned to cond ~ p
    2  random sparse, unit diagonal: 0.5 w.p. 0.2, shifted to PD and rescaled
    3  first-order moving average: 0.4 on the superdiagonal, diagonal tuned to cond ~ p
    4  second-order moving average: 1, 0.5, 0.25 bands
    5  inverse of the Toeplitz matrix 0.75^|i-j|
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from core.exceptions import GenerationFailed, NotPositiveDefinite
from symmat.matrices import SymMatrix, as_array, cholesky, cholesky_array, inverse_pd

logger = logging.getLogger(__name__)

MODEL_IDS = (1, 2, 3, 4, 5)
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class ModelSpec:
    model_id: int
    p: int
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ValueError(f"model must be one of {MODEL_IDS}, got {self.model_id}")
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")


def _symmetric_from_pairs(p, values):
    rows, cols = np.triu_indices(p, 1)
    out = np.zeros((p, p))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


def diagonal_for_condition(off, target):
    """Constant c with (l_max + c) / (l_min + c) = target for the eigenvalues of `off`.

    Returns None when that c would leave the matrix indefinite.
    """
    eigenvalues = np.linalg.eigvalsh(off)
    lo, hi = float(eigenvalues[0]), float(eigenvalues[-1])
    c = (hi - target * lo) / (target - 1.0)
    if c <= -lo:
        return None
    return c


def _conditioned(off, p):
    if not np.any(off):
        # no pair was drawn; any positive diagonal gives cond 1
        logger.debug("Off-diagonal part is empty; using the identity")
        return np.eye(p)
    c = diagonal_for_condition(off, float(p))
    if c is None:
        return None
    return off + c * np.eye(p)


def _model_1(p, rng):
    for attempt in range(1, MAX_ATTEMPTS + 1):
        m = p * (p - 1) // 2
        present = rng.random(m) < 0.02
        signs = np.where(rng.random(m) < 0.5, -1.0, 1.0)
        sigma = _conditioned(_symmetric_from_pairs(p, present * signs), p)
        if sigma is not None:
            return sigma
        logger.debug(f"Model 1 draw {attempt} cannot reach cond {p}; redrawing")
    raise GenerationFailed(f"Model 1 failed to produce a PD matrix in {MAX_ATTEMPTS} attempts")


def _model_2(p, rng):
    m = p * (p - 1) // 2
    b = _symmetric_from_pairs(p, 0.5 * (rng.random(m) < 0.2)) + np.eye(p)
    delta = max(-float(np.linalg.eigvalsh(b)[0]), 0.0) + 0.05
    return (b + delta * np.eye(p)) / (1.0 + delta)


def _model_3(p, rng):
    off = np.zeros((p, p))
    k = np.arange(p - 1)
    off[k, k + 1] = off[k + 1, k] = 0.4
    sigma = _conditioned(off, p)
    if sigma is None:
        raise GenerationFailed(f"Model 3 cannot reach cond {p}")
    return sigma


def _model_4(p, rng):
    first = np.zeros(p)
    first[:3] = (1.0, 0.5, 0.25)[:p]
    return linalg.toeplitz(first)


def _model_5(p, rng):
    return as_array(inverse_pd(linalg.toeplitz(0.75 ** np.arange(p))))


GENERATORS = {1: _model_1, 2: _model_2, 3: _model_3, 4: _model_4, 5: _model_5}


def gen_model(spec, rng):
    sigma = GENERATORS[spec.model_id](spec.p, rng)
    try:
        cholesky_array(sigma)
    except NotPositiveDefinite as e:
        raise GenerationFailed(f"Model {spec.model_id} (p={spec.p}) is not PD: {e}") from e
    return SymMatrix.symmetrize(sigma)


def sample_mvn(n, sigma0, rng):
    """n x p rows i.i.d. N(0, Sigma0), as G L' with G standard normal."""
    lower = cholesky(sigma0).lower
    g = rng.standard_normal((n, lower.shape[0]))
    return g @ lower.T


def sample_cov(x):
    """X'X / n; the data are taken as mean zero."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return SymMatrix.symmetrize(x.T @ x / x.shape[0])


def truth_rng(seed):
    """Stream for Sigma0, disjoint from the data streams seed ^ r."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
