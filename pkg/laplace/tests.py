import math

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate

from bcd.solver import gamma_hat, solve
from core.exceptions import NotPositiveDefinite
from laplace.approximation import (HessianMatrix, ScoreCache, analytic_hessian, fd_hessian,
                                   free_coordinates, log_model_prob, score_cache_lookup)
from objective.prior import EdgeSet, Hyperparams, log_edge_factor
from symmat.matrices import cholesky

H = Hyperparams(q=0.5, v=1.0, lam=1.0)
TIGHT = Hyperparams(q=0.5, v=1.0, lam=1.0, bcd_tol=1e-12, bcd_max_iter=5000)


def random_s(rng, p):
    a = rng.standard_normal((p, p))
    return a @ a.T / p + 0.5 * np.eye(p)


def random_z(rng, p):
    return EdgeSet(p, rng.random(p * (p - 1) // 2) < 0.5)


def sample_s(sigma0, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, sigma0.shape[0])) @ np.linalg.cholesky(sigma0).T
    return x.T @ x / n


def r_2x2(a, b, c, s, h, n, with_pair):
    """Vectorized objective for p = 2 over (sigma11, sigma22, sigma12); nan off the PD cone."""
    det = a * b - c * c
    ok = (a > 0) & (det > 0)
    det = np.where(ok, det, 1.0)
    trace = (s[0, 0] * b - 2.0 * s[0, 1] * c + s[1, 1] * a) / det
    pen = h.lam / n * (a + b) + (c * c / (n * h.v ** 2) if with_pair else 0.0)
    return np.where(ok, np.log(det) + trace + pen, np.nan)


def log_integral_2x2(s, z, h, n, half_width=7.0, points=57):
    """log of edge factor x integral of exp(-(n/2) r_Z) over the free coordinates, by Simpson's rule
    on a grid aligned with the Hessian at the mode."""
    result = solve(s, z, h, n)
    hess = analytic_hessian(result.sigma_star, s, z, n, h.v).entries
    center = np.array([result.sigma_star.entry(i, j) for i, j in free_coordinates(z)])
    scale = np.linalg.cholesky(np.linalg.inv(0.5 * n * hess))
    d = center.size
    t = np.linspace(-half_width, half_width, points)
    mesh = np.meshgrid(*([t] * d), indexing='ij')
    theta = center[:, None] + scale @ np.stack([m.ravel() for m in mesh])
    c = theta[2] if d == 3 else np.zeros(theta.shape[1])
    r = r_2x2(theta[0], theta[1], c, s, h, n, d == 3)
    values = np.exp(-0.5 * n * (r - result.objective))
    values = np.nan_to_num(values, nan=0.0).reshape(mesh[0].shape)
    for _ in range(d):
        values = integrate.simpson(values, x=t, axis=0)
    return log_edge_factor(z, h) - 0.5 * n * result.objective + math.log(abs(np.linalg.det(scale)) * values)


class HessianTests(SimpleTestCase):
    def test_identity_case(self):
        n, v = 10, 1.0
        expected = np.diag([1.0, 1.0, 2.0 * (1.0 + 1.0 / (n * v ** 2))])
        hess = analytic_hessian(np.eye(2), np.eye(2), EdgeSet.full(2), n, v)
        self.assertEqual(hess.index_map, ((0, 0), (1, 1), (0, 1)))
        self.assertEqual(hess.order, 3)
        np.testing.assert_allclose(hess.entries, expected, atol=1e-14)
        fd = fd_hessian(np.eye(2), np.eye(2), EdgeSet.full(2), H, n)
        np.testing.assert_allclose(fd.entries, expected, atol=1e-4)

    def test_scalar(self):
        sigma, s = 1.7, 2.0
        omega, u = 1 / sigma, s / sigma ** 2
        hess = analytic_hessian(np.array([[sigma]]), np.array([[s]]), EdgeSet.empty(1), 10, 1.0)
        self.assertAlmostEqual(hess.entries[0, 0], -omega ** 2 + 2 * u * omega, places=12)
        fd = fd_hessian(np.array([[sigma]]), np.array([[s]]), EdgeSet.empty(1), H, 10)
        self.assertAlmostEqual(fd.entries[0, 0], -1 / sigma ** 2 + 2 * s / sigma ** 3, places=4)

    def test_fd_exact_on_quadratic(self):
        m = np.array([[2.0, 0.3, -0.1], [0.3, 1.0, 0.2], [-0.1, 0.2, 4.0]])

        def quadratic(sigma):
            x = np.array([sigma[0, 0], sigma[1, 1], sigma[0, 1]])
            return 0.5 * x @ m @ x

        fd = fd_hessian(np.eye(2), np.eye(2), EdgeSet.full(2), H, 10, step=0.5, func=quadratic)
        np.testing.assert_allclose(fd.entries, m, atol=1e-10)

    def test_analytic_matches_fd_on_random_modes(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            p = int(rng.integers(1, 5))
            n = int(rng.choice([20, 100, 500]))
            s, z = random_s(rng, p), random_z(rng, p)
            sigma_star = solve(s, z, TIGHT, n).sigma_star
            analytic = analytic_hessian(sigma_star, s, z, n, TIGHT.v).entries
            fd = fd_hessian(sigma_star, s, z, TIGHT, n).entries
            self.assertLessEqual(np.max(np.abs(analytic - fd)) / np.max(np.abs(analytic)), 1e-4)
            np.testing.assert_array_equal(analytic, analytic.T)
            cholesky(analytic)

    def leaves_cone_beyond(self, base, radius):
        seen = []

        def guarded(sigma):
            reach = float(np.max(np.abs(sigma - base)))
            seen.append(reach)
            if reach > radius:
                raise NotPositiveDefinite("outside the test region")
            return float(np.sum((sigma - base) ** 2))

        return guarded, seen

    def test_fd_step_shrinks_until_inside(self):
        base = np.eye(2)
        guarded, seen = self.leaves_cone_beyond(base, 1e-4)
        fd = fd_hessian(base, base, EdgeSet.empty(2), H, 10, step=1e-2, func=guarded)
        np.testing.assert_allclose(fd.entries, 2.0 * np.eye(2), atol=1e-6)
        self.assertAlmostEqual(max(seen[-4:]), 2e-5, places=12)

    def test_fd_gives_up_after_three_shrinks(self):
        base = np.eye(2)
        guarded, _ = self.leaves_cone_beyond(base, 1e-4)
        with self.assertRaises(NotPositiveDefinite):
            fd_hessian(base, base, EdgeSet.empty(2), H, 10, step=1e-1, func=guarded)

    def test_log_det_ignores_diagonal_scale(self):
        entries = np.diag([1.28e-6, 2.04e10])
        hess = HessianMatrix(entries=entries, index_map=((0, 0), (1, 1)))
        self.assertAlmostEqual(hess.log_det(), math.log(1.28e-6) + math.log(2.04e10), places=10)
        coupled = np.array([[1e-6, 0.5e-2], [0.5e-2, 1e2]])
        expected = math.log(np.linalg.det(coupled))
        self.assertAlmostEqual(HessianMatrix(coupled, ((0, 0), (1, 1))).log_det(), expected, places=8)
        with self.assertRaises(NotPositiveDefinite):
            HessianMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]), ((0, 0), (1, 1))).log_det()
        with self.assertRaises(NotPositiveDefinite):
            HessianMatrix(np.diag([1.0, -1e-3]), ((0, 0), (1, 1))).log_det()


class LogModelProbTests(SimpleTestCase):
    def test_badly_scaled_variances_stay_feasible(self):
        s = np.diag([3.2e5, 7e-6])
        h = Hyperparams(q=0.5)
        for z in (EdgeSet.empty(2), EdgeSet.full(2)):
            with self.subTest(edges=z.count()):
                score = log_model_prob(z, s, h, 200)
                self.assertTrue(score.feasible, score.reason)
                self.assertTrue(math.isfinite(score.log_prob))

    def test_scalar_closed_form(self):
        s, n = 2.0, 10
        sigma = gamma_hat(s, H.lam / n)
        expected = (-0.5 * n * (math.log(sigma) + s / sigma + H.lam * sigma / n)
                    + 0.5 * math.log(4 * math.pi / n)
                    - 0.5 * math.log(-1 / sigma ** 2 + 2 * s / sigma ** 3))
        score = log_model_prob(EdgeSet.empty(1), np.array([[s]]), H, n)
        self.assertAlmostEqual(score.log_prob, expected, places=8)

    def test_prefactor_bookkeeping(self):
        # with S diagonal the included pair stays at zero, so only the prefactors and |H| differ
        s, n = np.diag([1.0, 2.0]), 50
        empty = log_model_prob(EdgeSet.empty(2), s, H, n)
        full = log_model_prob(EdgeSet.full(2), s, H, n)
        np.testing.assert_allclose(empty.sigma_star.array, full.sigma_star.array, atol=1e-12)
        expected = (math.log(1 / math.sqrt(2 * math.pi)) + 0.5 * math.log(4 * math.pi / n)
                    - 0.5 * (full.hessian_logdet - empty.hessian_logdet))
        self.assertAlmostEqual(full.log_prob - empty.log_prob, expected, places=8)

    def test_scalar_matches_quadrature(self):
        s, n = 1.3, 500
        score = log_model_prob(EdgeSet.empty(1), np.array([[s]]), H, n)
        sigma = score.sigma_star.entry(0, 0)
        width = 40 * math.sqrt(2.0 / (n * math.exp(score.hessian_logdet)))

        def integrand(x):
            return math.exp(-0.5 * n * (math.log(x) + s / x + H.lam * x / n - score.objective))

        value, _ = integrate.quad(integrand, max(1e-9, sigma - width), sigma + width, points=[sigma], limit=200)
        exact = -0.5 * n * score.objective + math.log(value)
        self.assertLess(abs(score.log_prob - exact), math.log(1.02))

    def test_pair_ratio_matches_quadrature(self):
        n = 500
        s = sample_s(np.array([[1.0, 0.12], [0.12, 1.5]]), n, seed=3)
        empty, full = EdgeSet.empty(2), EdgeSet.full(2)
        laplace_gap = log_model_prob(full, s, H, n).log_prob - log_model_prob(empty, s, H, n).log_prob
        quadrature_gap = log_integral_2x2(s, full, H, n) - log_integral_2x2(s, empty, H, n)
        self.assertLess(abs(math.exp(laplace_gap - quadrature_gap) - 1.0), 0.05)

    def test_edge_probability_moves_only_the_prefactor(self):
        rng = np.random.default_rng(5)
        s = random_s(rng, 3)
        sparse, dense = EdgeSet.empty(3), EdgeSet.full(3)
        low, high = Hyperparams(q=0.1), Hyperparams(q=0.4)
        gap_low = log_model_prob(dense, s, low, 40).log_prob - log_model_prob(sparse, s, low, 40).log_prob
        gap_high = log_model_prob(dense, s, high, 40).log_prob - log_model_prob(sparse, s, high, 40).log_prob
        self.assertGreater(gap_high, gap_low)
        self.assertAlmostEqual(gap_high - gap_low, log_edge_factor(dense, high) - log_edge_factor(dense, low), places=8)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        s, z = random_s(rng, 4), random_z(rng, 4)
        perm = [1, 3, 0, 2]
        base = log_model_prob(z, s, TIGHT, 60).log_prob
        permuted = log_model_prob(z.permuted(perm), s[np.ix_(perm, perm)], TIGHT, 60).log_prob
        self.assertAlmostEqual(base, permuted, places=6)

    def test_infeasible_scores_minus_infinity(self):
        score = log_model_prob(EdgeSet.empty(2), np.diag([1.0, 0.0]), H, 10)
        self.assertFalse(score.feasible)
        self.assertEqual(score.log_prob, -math.inf)


class ScoreCacheTests(SimpleTestCase):
    def test_miss_then_hit(self):
        rng = np.random.default_rng(7)
        s, z = random_s(rng, 3), random_z(rng, 3)
        cache = ScoreCache()
        self.assertIsNone(score_cache_lookup(cache, z))
        first = log_model_prob(z, s, H, 30, cache=cache)
        second = log_model_prob(z, s, H, 30, cache=cache)
        self.assertIs(first, second)
        self.assertEqual(cache.hits, 1)
        self.assertEqual(len(cache), 1)

    def test_distinct_structures_do_not_collide(self):
        rng = np.random.default_rng(8)
        s = random_s(rng, 3)
        cache = ScoreCache()
        for k in range(3):
            log_model_prob(EdgeSet.empty(3).flip(k), s, H, 30, cache=cache)
        self.assertEqual(len(cache), 3)
        for k in range(3):
            self.assertEqual(cache.lookup(EdgeSet.empty(3).flip(k)).z, EdgeSet.empty(3).flip(k))

    def test_insert_keeps_first_score(self):
        rng = np.random.default_rng(9)
        s, z = random_s(rng, 2), EdgeSet.full(2)
        cache = ScoreCache()
        first = log_model_prob(z, s, H, 30)
        other = log_model_prob(z, s, H, 31)
        self.assertIs(cache.insert(z, first), first)
        self.assertIs(cache.insert(z, other), first)
