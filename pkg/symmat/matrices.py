"""
Dense symmetric linear algebra for covariance work.

`SymMatrix` keeps one canonical slot per unordered pair (the packed upper
triangle), so entry(i, j) == entry(j, i) holds by construction. Everything
else is a pure function returning new values.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from core.exceptions import DimensionMismatch, NotPositiveDefinite

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class SymMatrix:
    """Immutable dense symmetric p x p matrix."""

    __slots__ = ('dim', '_upper', '_dense')

    def __init__(self, dim, upper):
        if dim < 1:
            raise DimensionMismatch(f"dimension must be >= 1, got {dim}")
        upper = np.array(upper, dtype=float).ravel()
        if upper.size != dim * (dim + 1) // 2:
            raise DimensionMismatch(f"packed storage of size {upper.size} does not fit dimension {dim}")
        upper.flags.writeable = False
        self.dim = int(dim)
        self._upper = upper
        self._dense = None

    # --- constructors ---

    @classmethod
    def from_array(cls, a, atol=1e-12):
        """Build from a square array; the upper triangle is the canonical copy."""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
        if not np.allclose(a, a.T, rtol=0.0, atol=atol * scale):
            raise ValueError("matrix is not symmetric")
        p = a.shape[0]
        return cls(p, a[np.triu_indices(p)])

    @classmethod
    def symmetrize(cls, a):
        """Build from (a + a') / 2, for results of floating point products."""
        a = np.asarray(a, dtype=float)
        return cls.from_array((a + a.T) / 2.0)

    @classmethod
    def identity(cls, p):
        return cls.diag(np.ones(p))

    @classmethod
    def zeros(cls, p):
        return cls(p, np.zeros(p * (p + 1) // 2))

    @classmethod
    def diag(cls, values):
        values = np.asarray(values, dtype=float).ravel()
        return cls.from_array(np.diag(values))

    # --- access ---

    def _slot(self, i, j):
        if i > j:
            i, j = j, i
        if not (0 <= i and j < self.dim):
            raise IndexError(f"({i},{j}) outside a {self.dim}x{self.dim} matrix")
        return i * self.dim - i * (i - 1) // 2 + (j - i)

    def entry(self, i, j):
        return float(self._upper[self._slot(i, j)])

    def set(self, i, j, value):
        """Return a copy with the single slot of pair (i, j) replaced."""
        upper = self._upper.copy()
        upper[self._slot(i, j)] = value
        return SymMatrix(self.dim, upper)

    @property
    def array(self):
        """Dense read-only view, built once."""
        if self._dense is None:
            p = self.dim
            dense = np.zeros((p, p))
            rows, cols = np.triu_indices(p)
            dense[rows, cols] = self._upper
            dense[cols, rows] = self._upper
            dense.flags.writeable = False
            self._dense = dense
        return self._dense

    @property
    def shape(self):
        return (self.dim, self.dim)

    def diagonal(self):
        return np.diag(self.array).copy()

    def permuted(self, perm):
        """P A P' for the permutation taking new index k to old index perm[k]."""
        perm = np.asarray(perm)
        return SymMatrix.from_array(self.array[np.ix_(perm, perm)])

    def __sub__(self, other):
        _check_same_dim(self, other)
        return SymMatrix(self.dim, self._upper - other._upper)

    def __add__(self, other):
        _check_same_dim(self, other)
        return SymMatrix(self.dim, self._upper + other._upper)

    def __repr__(self):
        return f"SymMatrix(dim={self.dim})"


def _check_same_dim(a, b):
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")


def as_array(a):
    """Dense ndarray of a SymMatrix or an array-like."""
    if isinstance(a, SymMatrix):
        return a.array
    return np.asarray(a, dtype=float)


@dataclass(frozen=True)
class CholeskyFactor:
    dim: int
    lower: np.ndarray

    def reconstruct(self):
        return SymMatrix.symmetrize(self.lower @ self.lower.T)

    def solve(self, b):
        return linalg.cho_solve((self.lower, True), b)


@dataclass(frozen=True)
class SpectralNorm:
    value: float
    iterations: int
    converged: bool

    def __float__(self):
        return self.value


class Norms(NamedTuple):
    frob: float
    max_abs: float


def cholesky_array(a):
    """Lower Cholesky factor of a dense symmetric array.

    A pivot L_ii^2 at or below dim * eps * max|A| counts as a failure.
    """
    a = np.asarray(a, dtype=float)
    p = a.shape[0]
    max_abs = float(np.max(np.abs(a))) if a.size else 0.0
    if max_abs == 0.0 or not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix is zero or not finite")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(str(e)) from e
    pivots = np.diag(lower) ** 2
    threshold = p * EPS * max_abs
    bad = np.flatnonzero(~(pivots > threshold))
    if bad.size:
        raise NotPositiveDefinite(f"pivot {int(bad[0])} = {pivots[bad[0]]!r} below {threshold!r}", pivot=int(bad[0]))
    return lower


def cholesky(a):
    lower = cholesky_array(as_array(a))
    lower.flags.writeable = False
    return CholeskyFactor(dim=lower.shape[0], lower=lower)


def log_det(factor):
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))


def inverse_pd_array(a):
    lower = cholesky_array(a)
    inv = linalg.cho_solve((lower, True), np.eye(lower.shape[0]))
    return (inv + inv.T) / 2.0


def inverse_pd(a):
    return SymMatrix.from_array(inverse_pd_array(as_array(a)))


def _rayleigh_power(b, start, tol, max_iter):
    """Power iteration on the PSD matrix b; returns (eigenvalue, iterations, converged)."""
    v = start / np.linalg.norm(start)
    previous = None
    for it in range(1, max_iter + 1):
        w = b @ v
        quotient = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, it, True
        v = w / norm
        if previous is not None and abs(quotient - previous) <= tol * abs(quotient):
            return quotient, it, True
        previous = quotient
    return quotient, max_iter, False


def spectral_norm(a, tol=1e-12, max_iter=10000):
    """Largest |eigenvalue| of a symmetric matrix by power iteration on A A.

    Starts from the normalized all-ones vector. Because that start can be
    orthogonal to the top eigenvector, a second run starts from the basis
    vector of the largest diagonal entry of A A and the larger Rayleigh
    quotient is kept.
    """
    a = as_array(a)
    b = a @ a
    p = a.shape[0]
    if not np.any(b):
        return SpectralNorm(0.0, 0, True)
    first = _rayleigh_power(b, np.ones(p), tol, max_iter)
    fallback = np.zeros(p)
    fallback[int(np.argmax(np.diag(b)))] = 1.0
    second = _rayleigh_power(b, fallback, tol, max_iter)
    quotient, _, converged = max(first, second, key=lambda r: r[0])
    if not converged:
        logger.warning(f"Power iteration stopped after {max_iter} iterations without reaching tol={tol}")
    return SpectralNorm(float(np.sqrt(max(quotient, 0.0))), first[1] + second[1], converged)


def norms(a):
    a = as_array(a)
    return Norms(float(np.sqrt(np.sum(a * a))), float(np.max(np.abs(a))) if a.size else 0.0)


def condition_number(a):
    """2-norm condition number of a symmetric PD matrix (full eigen-solve)."""
    eigenvalues = np.linalg.eigvalsh(as_array(a))
    return float(eigenvalues[-1] / eigenvalues[0])
