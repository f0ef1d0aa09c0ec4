"""
Spike-and-slab prior on covariance structures and the penalized objective.

Off-diagonal entries of an included pair get a N(0, v^2) slab with prior
inclusion probability q; excluded pairs sit at exactly zero. Diagonal entries
carry an exponential prior with rate lambda / 2. With n observations and
sample covariance S the negative log posterior kernel, scaled by 2 / n, is

    r_Z(Sigma) = log|Sigma| + tr(S Sigma^-1) + penalty(Sigma, Z)
"""
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import linalg

from core.exceptions import DimensionMismatch, StructureViolation
from symmat.matrices import as_array, cholesky_array

logger = logging.getLogger(__name__)

STRUCTURE_TOL = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    q: float
    v: float = 1.0
    lam: float = 1.0
    zero_threshold: float = 0.001
    bcd_tol: float = 1e-6
    bcd_max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if not self.v > 0.0:
            raise ValueError(f"v must be positive, got {self.v}")
        if not self.lam > 0.0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.zero_threshold < 0.0:
            raise ValueError(f"zero_threshold must be >= 0, got {self.zero_threshold}")
        if not self.bcd_tol > 0.0:
            raise ValueError(f"bcd_tol must be positive, got {self.bcd_tol}")
        if self.bcd_max_iter < 1:
            raise ValueError(f"bcd_max_iter must be >= 1, got {self.bcd_max_iter}")

    @classmethod
    def for_dimension(cls, p, **overrides):
        """Defaults with q = log(p) / p^2 unless q is given."""
        fields = {k: v for k, v in overrides.items() if v is not None}
        fields.setdefault('q', default_edge_probability(p))
        return cls(**fields)

    def with_overrides(self, **overrides):
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def as_dict(self):
        return {
            'q': self.q, 'v': self.v, 'lambda': self.lam,
            'zero_threshold': self.zero_threshold,
            'bcd_tol': self.bcd_tol, 'bcd_max_iter': self.bcd_max_iter,
        }


def default_edge_probability(p):
    # p = 1 has no pairs, so q never enters; 0.5 keeps Hyperparams valid
    if p < 2:
        return 0.5
    return math.log(p) / p ** 2


@lru_cache(maxsize=64)
def pair_indices(p):
    """Canonical (i, j), i < j, lexicographic: (0,1), (0,2), ..., (1,2), ..."""
    rows, cols = np.triu_indices(p, 1)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


class EdgeSet:
    """Inclusion indicator over the p(p-1)/2 unordered pairs."""

    __slots__ = ('dim', 'bits', '_key')

    def __init__(self, dim, bits):
        bits = np.array(bits, dtype=bool).ravel()
        if bits.size != dim * (dim - 1) // 2:
            raise DimensionMismatch(f"{bits.size} bits do not index the pairs of dimension {dim}")
        bits.flags.writeable = False
        self.dim = int(dim)
        self.bits = bits
        self._key = None

    @classmethod
    def empty(cls, p):
        return cls(p, np.zeros(p * (p - 1) // 2, dtype=bool))

    @classmethod
    def full(cls, p):
        return cls(p, np.ones(p * (p - 1) // 2, dtype=bool))

    @classmethod
    def from_adjacency(cls, adjacency):
        adjacency = np.asarray(adjacency, dtype=bool)
        rows, cols = pair_indices(adjacency.shape[0])
        return cls(adjacency.shape[0], adjacency[rows, cols])

    @classmethod
    def from_pairs(cls, p, pairs):
        adjacency = np.zeros((p, p), dtype=bool)
        for i, j in pairs:
            adjacency[i, j] = adjacency[j, i] = True
        return cls.from_adjacency(adjacency)

    @property
    def size(self):
        return self.bits.size

    def count(self):
        return int(np.count_nonzero(self.bits))

    def index(self, i, j):
        if i > j:
            i, j = j, i
        if i == j or not (0 <= i and j < self.dim):
            raise IndexError(f"({i},{j}) is not an off-diagonal pair of dimension {self.dim}")
        return i * (2 * self.dim - i - 1) // 2 + (j - i - 1)

    def includes(self, i, j):
        return bool(self.bits[self.index(i, j)])

    def flip(self, k):
        bits = self.bits.copy()
        bits[k] = not bits[k]
        return EdgeSet(self.dim, bits)

    def pairs(self):
        rows, cols = pair_indices(self.dim)
        return list(zip(rows[self.bits].tolist(), cols[self.bits].tolist()))

    def adjacency(self):
        adjacency = np.zeros((self.dim, self.dim), dtype=bool)
        rows, cols = pair_indices(self.dim)
        adjacency[rows, cols] = self.bits
        adjacency[cols, rows] = self.bits
        return adjacency

    def permuted(self, perm):
        """Structure of P Sigma P' for new index k = old index perm[k]."""
        perm = np.asarray(perm)
        return EdgeSet.from_adjacency(self.adjacency()[np.ix_(perm, perm)])

    @property
    def key(self):
        """Exact hashable key: dimension plus the packed bit pattern."""
        if self._key is None:
            self._key = (self.dim, np.packbits(self.bits).tobytes())
        return self._key

    def as_list(self):
        return [int(b) for b in self.bits]

    def __eq__(self, other):
        return isinstance(other, EdgeSet) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"EdgeSet(dim={self.dim}, edges={self.count()})"


def _check_dims(sigma, z):
    if sigma.shape[0] != z.dim:
        raise DimensionMismatch(f"matrix of dimension {sigma.shape[0]} with a structure over {z.dim} variables")


def check_structure(sigma, z):
    """Raise StructureViolation if an excluded pair is not zero."""
    sigma = as_array(sigma)
    _check_dims(sigma, z)
    rows, cols = pair_indices(z.dim)
    excluded = ~z.bits
    values = sigma[rows[excluded], cols[excluded]]
    bad = np.flatnonzero(np.abs(values) > STRUCTURE_TOL)
    if bad.size:
        k = bad[0]
        raise StructureViolation(int(rows[excluded][k]), int(cols[excluded][k]), float(values[k]))


def penalty(sigma, z, h, n):
    """(1 / (n v^2)) sum over included pairs of sigma_ij^2 + (lambda / n) tr(Sigma)."""
    sigma = as_array(sigma)
    _check_dims(sigma, z)
    rows, cols = pair_indices(z.dim)
    off = sigma[rows[z.bits], cols[z.bits]]
    return float(np.sum(off * off)) / (n * h.v ** 2) + h.lam / n * float(np.trace(sigma))


def objective_r(sigma, z, s, h, n):
    sigma, s = as_array(sigma), as_array(s)
    if s.shape != sigma.shape:
        raise DimensionMismatch(f"S has shape {s.shape}, Sigma has shape {sigma.shape}")
    check_structure(sigma, z)
    lower = cholesky_array(sigma)
    log_det = 2.0 * float(np.sum(np.log(np.diag(lower))))
    trace = float(np.trace(linalg.cho_solve((lower, True), s)))
    return log_det + trace + penalty(sigma, z, h, n)


def log_edge_factor(z, h):
    """#Z log(q / ((1 - q) sqrt(2 pi) v))."""
    return z.count() * math.log(h.q / ((1.0 - h.q) * math.sqrt(2.0 * math.pi) * h.v))
