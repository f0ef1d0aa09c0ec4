import math

import numpy as np
from django.test import SimpleTestCase
from scipy import optimize

from bcd.solver import (column_update, compute_u, gamma_hat, initial_point, partition_column, solve,
                        stationarity_residual)
from core.exceptions import NonpositiveU, NotPositiveDefinite
from objective.prior import EdgeSet, Hyperparams, objective_r
from symmat.matrices import cholesky

H = Hyperparams(q=0.5, v=1.0, lam=1.0)
TIGHT = Hyperparams(q=0.5, v=1.0, lam=1.0, bcd_tol=1e-10, bcd_max_iter=5000)


def random_s(rng, p):
    a = rng.standard_normal((p, p))
    return a @ a.T / p + 0.5 * np.eye(p)


def random_z(rng, p):
    return EdgeSet(p, rng.random(p * (p - 1) // 2) < 0.5)


def free_coordinates(z):
    return [(i, i) for i in range(z.dim)] + z.pairs()


def to_matrix(x, coords, p):
    sigma = np.zeros((p, p))
    for value, (i, j) in zip(x, coords):
        sigma[i, j] = sigma[j, i] = value
    return sigma


def generic_minimizer(s, z, h, n):
    """Nelder-Mead from the diagonal start, polished by BFGS with the analytic gradient."""
    p = s.shape[0]
    coords = free_coordinates(z)
    start = initial_point(s, h, n)

    def f(x):
        try:
            return objective_r(to_matrix(x, coords, p), z, s, h, n)
        except NotPositiveDefinite:
            return 1e10

    def grad(x):
        sigma = to_matrix(x, coords, p)
        omega = np.linalg.inv(sigma)
        g = omega - omega @ s @ omega
        return np.array([g[i, i] + h.lam / n if i == j else 2 * g[i, j] + 2 * sigma[i, j] / (n * h.v ** 2)
                         for i, j in coords])

    x0 = np.array([start[i, j] for i, j in coords])
    rough = optimize.minimize(f, x0, method='Nelder-Mead',
                              options={'maxiter': 4000, 'xatol': 1e-8, 'fatol': 1e-12, 'adaptive': True})
    fine = optimize.minimize(f, rough.x, jac=grad, method='BFGS', options={'gtol': 1e-10})
    best = fine.x if fine.fun <= rough.fun else rough.x
    return to_matrix(best, coords, p)


class GammaHatTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(gamma_hat(1.0, 0.0), 1.0)
        self.assertAlmostEqual(gamma_hat(2.0, 0.5), math.sqrt(5) - 1, places=12)

    def test_stationarity(self):
        for u, rho in ((0.3, 0.01), (5.0, 2.0), (1e3, 1e-6)):
            g = gamma_hat(u, rho)
            self.assertAlmostEqual(1 / g - u / g ** 2 + rho, 0.0, places=10)

    def test_nonpositive_u(self):
        with self.assertRaises(NonpositiveU):
            gamma_hat(0.0, 0.1)


class ComputeUTests(SimpleTestCase):
    def test_empty_beta(self):
        s = np.diag([1.0, 2.0, 3.0])
        part = partition_column(np.eye(3), s, 1, EdgeSet.empty(3))
        self.assertEqual(compute_u(part, np.zeros(0)), 2.0)

    def test_schur_complement_is_the_minimum(self):
        rng = np.random.default_rng(0)
        s = random_s(rng, 4)
        z = EdgeSet.full(4)
        sigma = np.diag(np.diag(s)) + 0.1
        sigma = sigma + 3 * np.eye(4)
        j = 2
        part = partition_column(sigma, s, j, z)
        others = part.others
        s11, s12 = s[np.ix_(others, others)], s[others, j]
        beta = sigma[np.ix_(others, others)] @ np.linalg.solve(s11, s12)
        schur = s[j, j] - s12 @ np.linalg.solve(s11, s12)
        self.assertAlmostEqual(compute_u(part, beta), schur, places=10)

    def test_u_bounded_by_schur_complement(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            p = int(rng.integers(2, 6))
            s = random_s(rng, p)
            z = random_z(rng, p)
            sigma = np.diag(rng.uniform(1.0, 3.0, p))
            for i, k in z.pairs():
                sigma[i, k] = sigma[k, i] = rng.uniform(-0.3, 0.3) / p
            j = int(rng.integers(p))
            part = partition_column(sigma, s, j, z)
            others = part.others
            schur = s[j, j] - s[others, j] @ np.linalg.solve(s[np.ix_(others, others)], s[others, j])
            u = compute_u(part, sigma[part.free_idx, j])
            self.assertGreater(u, 0.0)
            self.assertGreaterEqual(u, schur - 1e-10)


class ColumnUpdateTests(SimpleTestCase):
    def test_decoupled_diagonal(self):
        s = np.diag([1.0, 2.0, 4.0])
        z = EdgeSet.empty(3)
        sigma = np.diag([1.0, 1.0, 1.0])
        updated = column_update(sigma, s, 2, z, H, 10).array
        self.assertAlmostEqual(updated[2, 2], gamma_hat(4.0, 0.1), places=12)
        self.assertEqual(updated[0, 2], 0.0)
        self.assertEqual(updated[1, 2], 0.0)

    def test_sweep_decreases_objective(self):
        s, z = np.eye(2), EdgeSet.full(2)
        sigma = initial_point(s, H, 10)
        before = objective_r(sigma, z, s, H, 10)
        for j in range(2):
            sigma = column_update(sigma, s, j, z, H, 10).array
        self.assertLessEqual(objective_r(sigma, z, s, H, 10), before + 1e-12)

    def test_pd_after_every_update(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p = int(rng.integers(2, 7))
            n = int(rng.choice([10, 50, 500]))
            s, z = random_s(rng, p), random_z(rng, p)
            sigma = initial_point(s, H, n)
            previous = objective_r(sigma, z, s, H, n)
            for j in range(p):
                sigma = column_update(sigma, s, j, z, H, n).array
                cholesky(sigma)
                current = objective_r(sigma, z, s, H, n)
                self.assertLessEqual(current, previous + 1e-10 * max(1.0, abs(previous)))
                previous = current

    def test_fixed_point(self):
        rng = np.random.default_rng(8)
        s, z = random_s(rng, 4), random_z(rng, 4)
        result = solve(s, z, H, 50)
        sigma = result.sigma_star.array
        for j in range(4):
            sigma = column_update(sigma, s, j, z, H, 50).array
        self.assertLess(np.max(np.abs(sigma - result.sigma_star.array)), 10 * H.bcd_tol)


class SolveTests(SimpleTestCase):
    def test_scalar(self):
        result = solve(np.array([[2.0]]), EdgeSet.empty(1), H, 10)
        self.assertAlmostEqual(result.sigma_star.entry(0, 0), (-1 + math.sqrt(1.8)) / 0.2, places=7)
        self.assertTrue(result.converged)

    def test_empty_structure_is_diagonal(self):
        rng = np.random.default_rng(9)
        s = random_s(rng, 4)
        result = solve(s, EdgeSet.empty(4), H, 20)
        expected = np.diag([gamma_hat(s[i, i], 1 / 20) for i in range(4)])
        np.testing.assert_allclose(result.sigma_star.array, expected, atol=1e-12)

    def test_matches_generic_minimizer(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            p = int(rng.integers(1, 5))
            n = int(rng.choice([20, 200]))
            s, z = random_s(rng, p), random_z(rng, p)
            result = solve(s, z, TIGHT, n, strict=True)
            self.assertEqual(result.descent_violations, 0)
            self.assertTrue(np.all(np.diff(result.objectives) <= 1e-10 * np.maximum(1.0, np.abs(result.objectives[:-1]))))
            oracle = generic_minimizer(s, z, TIGHT, n)
            np.testing.assert_allclose(result.sigma_star.array, oracle, atol=1e-4)

    def test_respects_structure_exactly(self):
        rng = np.random.default_rng(13)
        s, z = random_s(rng, 5), random_z(rng, 5)
        sigma = solve(s, z, H, 30).sigma_star.array
        excluded = ~z.adjacency() & ~np.eye(5, dtype=bool)
        self.assertTrue(np.all(sigma[excluded] == 0.0))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(14)
        s, z = random_s(rng, 4), random_z(rng, 4)
        perm = [3, 1, 0, 2]
        base = solve(s, z, TIGHT, 40).sigma_star.array
        permuted = solve(s[np.ix_(perm, perm)], z.permuted(perm), TIGHT, 40).sigma_star.array
        np.testing.assert_allclose(permuted, base[np.ix_(perm, perm)], atol=1e-8)

    def test_diagnostics(self):
        rng = np.random.default_rng(15)
        s, z = random_s(rng, 4), EdgeSet.full(4)
        result = solve(s, z, TIGHT, 100)
        self.assertLess(result.stationarity, 1e-6)
        self.assertAlmostEqual(stationarity_residual(result.sigma_star, s, z, TIGHT, 100), result.stationarity)
        self.assertEqual(result.in_convex_region, result.constraint_gap < 0)

    def test_warm_start(self):
        rng = np.random.default_rng(16)
        s, z = random_s(rng, 4), EdgeSet.full(4)
        cold = solve(s, z, TIGHT, 50)
        warm = solve(s, z, TIGHT, 50, start=cold.sigma_star)
        self.assertLessEqual(warm.iterations, 2)
        np.testing.assert_allclose(warm.sigma_star.array, cold.sigma_star.array, atol=1e-8)

    def test_max_iterations_flag(self):
        rng = np.random.default_rng(17)
        s = random_s(rng, 4)
        h = Hyperparams(q=0.5, bcd_tol=1e-300, bcd_max_iter=2)
        with self.assertLogs('bcd.solver', level='WARNING'):
            result = solve(s, EdgeSet.full(4), h, 20)
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 2)

    def test_nonpositive_diagonal(self):
        with self.assertRaises(NotPositiveDefinite):
            solve(np.diag([1.0, 0.0]), EdgeSet.empty(2), H, 10)
