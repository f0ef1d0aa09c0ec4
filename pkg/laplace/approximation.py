"""
Laplace-approximated posterior model probabilities.

For a structure Z the marginal posterior integrates exp(-(n/2) r_Z) over the
free coordinates (all diagonal entries plus the included pairs). Expanding r_Z
to second order at its mode Sigma*_Z gives

    log pi*(Z | X) = #Z log(q / ((1 - q) sqrt(2 pi) v)) - (n/2) r_Z(Sigma*_Z)
                     + ((p + #Z)/2) log(4 pi / n) - (1/2) log|H|

up to a constant shared by every Z, where H is the Hessian of r_Z in the free
coordinates. A pair coordinate moves sigma_ij and sigma_ji together.
"""
import logging
import math
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bcd.solver import solve
from core.exceptions import DimensionMismatch, NonpositiveU, NotPositiveDefinite
from objective.prior import EdgeSet, log_edge_factor, objective_r, pair_indices
from symmat.matrices import SymMatrix, as_array, cholesky_array, inverse_pd_array

logger = logging.getLogger(__name__)

FD_SHRINK_ATTEMPTS = 3


def free_coordinates(z):
    """All (i, i) first, then the included (i, j), i < j, in canonical order."""
    diagonal = [(i, i) for i in range(z.dim)]
    return tuple(diagonal + z.pairs())


@dataclass(frozen=True)
class HessianMatrix:
    entries: np.ndarray
    index_map: tuple

    @property
    def order(self):
        return len(self.index_map)

    def log_det(self):
        """log|H| from the Cholesky factor of D^-1/2 H D^-1/2, D = diag(H).

        The pivot test runs on the unit-diagonal matrix; log|D| is added back.
        """
        d = np.diag(self.entries)
        if not np.all(d > 0.0) or not np.all(np.isfinite(d)):
            raise NotPositiveDefinite("Hessian has a non-positive diagonal entry")
        root = np.sqrt(d)
        lower = cholesky_array(self.entries / np.outer(root, root))
        return 2.0 * float(np.sum(np.log(np.diag(lower)))) + float(np.sum(np.log(d)))


def _coordinate_arrays(index_map):
    rows = np.array([i for i, _ in index_map], dtype=int)
    cols = np.array([j for _, j in index_map], dtype=int)
    # a diagonal coordinate is e_i e_i', not e_i e_j' + e_j e_i'
    weight = np.where(rows == cols, 0.5, 1.0)
    return rows, cols, weight


def _pair_trace(a, b, rows, cols):
    """tr(A E_x B E_y) for every pair of symmetric unit directions E_x, E_y."""
    ix = np.ix_
    return (a[ix(rows, cols)] * b[ix(cols, rows)]
            + a[ix(rows, rows)] * b[ix(cols, cols)]
            + a[ix(cols, cols)] * b[ix(rows, rows)]
            + a[ix(cols, rows)] * b[ix(rows, cols)])


def analytic_hessian(sigma_star, s, z, n, v):
    """Hessian of r_Z at Sigma* with Omega = Sigma*^-1 and U = Omega S Omega.

    Entry (x, y) is -tr(Omega E_x Omega E_y) + tr(U E_x Omega E_y)
    + tr(U E_y Omega E_x), plus 2 / (n v^2) on the diagonal of pair
    coordinates. Expanded this gives the four cases: pair/same pair
    2(-w_ii w_jj - w_ij^2 + 2 u_ij w_ij + u_jj w_ii + u_ii w_jj + 1/(n v^2)),
    pair/other pair, pair/diagonal and diagonal/diagonal -w_il^2 + 2 u_il w_il.
    """
    sigma_star, s = as_array(sigma_star), as_array(s)
    if sigma_star.shape != s.shape or sigma_star.shape[0] != z.dim:
        raise DimensionMismatch("Sigma*, S and Z disagree on the dimension")
    omega = inverse_pd_array(sigma_star)
    u = omega @ s @ omega
    index_map = free_coordinates(z)
    rows, cols, weight = _coordinate_arrays(index_map)

    entries = (-_pair_trace(omega, omega, rows, cols)
               + _pair_trace(u, omega, rows, cols)
               + _pair_trace(omega, u, rows, cols))
    entries *= np.outer(weight, weight)
    entries[np.diag_indices(len(index_map))] += np.where(rows == cols, 0.0, 2.0 / (n * v ** 2))
    return HessianMatrix(entries=(entries + entries.T) / 2.0, index_map=index_map)


def _with_coordinates(base, index_map, delta):
    out = base.copy()
    for (i, j), d in zip(index_map, delta):
        if d:
            out[i, j] += d
            if i != j:
                out[j, i] += d
    return out


def fd_hessian(sigma_star, s, z, h, n, step=None, func=None):
    """Central second differences of r_Z over the free coordinates.

    `func` replaces r_Z (it receives the dense perturbed matrix). When a
    perturbed point leaves the PD cone the step shrinks tenfold, at most
    three times.
    """
    base = np.array(as_array(sigma_star))
    s = as_array(s)
    if func is None:
        def func(sigma):
            return objective_r(sigma, z, s, h, n)
    if step is None:
        step = 1e-5 * max(1.0, float(np.max(np.abs(base))))
    index_map = free_coordinates(z)
    d = len(index_map)

    for attempt in range(FD_SHRINK_ATTEMPTS + 1):
        try:
            entries = np.zeros((d, d))
            unit = np.eye(d) * step
            for a in range(d):
                for b in range(a, d):
                    pp = func(_with_coordinates(base, index_map, unit[a] + unit[b]))
                    pm = func(_with_coordinates(base, index_map, unit[a] - unit[b]))
                    mp = func(_with_coordinates(base, index_map, -unit[a] + unit[b]))
                    mm = func(_with_coordinates(base, index_map, -unit[a] - unit[b]))
                    entries[a, b] = entries[b, a] = (pp - pm - mp + mm) / (4.0 * step * step)
            return HessianMatrix(entries=entries, index_map=index_map)
        except NotPositiveDefinite:
            if attempt == FD_SHRINK_ATTEMPTS:
                raise
            step *= 0.1
            logger.debug(f"Finite-difference point left the PD cone; step shrunk to {step!r}")


@dataclass(frozen=True)
class ModelScore:
    z: EdgeSet
    log_prob: float
    sigma_star: Optional[SymMatrix]
    objective: float
    hessian_logdet: float
    bcd_iterations: int = 0
    feasible: bool = True
    reason: str = ''


class ScoreCache:
    """Memoized scores keyed by the exact bit pattern of Z; append-only."""

    def __init__(self):
        self._scores = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def lookup(self, z):
        with self._lock:
            score = self._scores.get(z.key)
            if score is None:
                self.misses += 1
            else:
                self.hits += 1
            return score

    def insert(self, z, score):
        """Store `score` unless Z is already present; returns the stored score."""
        with self._lock:
            return self._scores.setdefault(z.key, score)

    def __len__(self):
        return len(self._scores)

    def __contains__(self, z):
        return z.key in self._scores


def score_cache_lookup(cache, z):
    return cache.lookup(z)


def log_model_prob(z, s, h, n, p=None, cache=None, start=None):
    """Unnormalized log pi*(Z | X); infeasible structures score -inf."""
    s = as_array(s)
    if p is not None and p != s.shape[0]:
        raise DimensionMismatch(f"p = {p} but S is {s.shape[0]} x {s.shape[0]}")
    p = s.shape[0]
    if z.dim != p:
        raise DimensionMismatch(f"structure over {z.dim} variables for a {p} x {p} covariance")

    if cache is not None:
        cached = cache.lookup(z)
        if cached is not None:
            return cached

    try:
        result = solve(s, z, h, n, start=start)
        hessian = analytic_hessian(result.sigma_star, s, z, n, h.v)
        hessian_logdet = hessian.log_det()
    except (NonpositiveU, NotPositiveDefinite) as e:
        logger.debug(f"Structure with {z.count()} edges is infeasible: {e}")
        score = ModelScore(z=z, log_prob=-math.inf, sigma_star=None, objective=math.inf,
                           hessian_logdet=math.nan, feasible=False, reason=str(e))
    else:
        order = p + z.count()
        log_prob = (log_edge_factor(z, h)
                    - 0.5 * n * result.objective
                    + 0.5 * order * math.log(4.0 * math.pi / n)
                    - 0.5 * hessian_logdet)
        score = ModelScore(z=z, log_prob=log_prob, sigma_star=result.sigma_star,
                           objective=result.objective, hessian_logdet=hessian_logdet,
                           bcd_iterations=result.iterations)

    if cache is not None:
        score = cache.insert(z, score)
    return score
