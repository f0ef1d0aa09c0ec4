import math

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import NotPositiveDefinite
from symmat.matrices import (SymMatrix, cholesky, condition_number, inverse_pd, log_det, norms,
                             spectral_norm)


def random_pd(rng, p):
    a = rng.standard_normal((p, p))
    return a @ a.T + p * np.eye(p)


class SymMatrixTests(SimpleTestCase):
    def test_single_storage_per_pair(self):
        m = SymMatrix.zeros(3).set(2, 0, 1.5)
        self.assertEqual(m.entry(0, 2), 1.5)
        self.assertEqual(m.entry(2, 0), 1.5)
        np.testing.assert_array_equal(m.array, m.array.T)

    def test_from_array_rejects_asymmetric(self):
        with self.assertRaises(ValueError):
            SymMatrix.from_array([[1.0, 2.0], [0.0, 1.0]])

    def test_dense_view_is_read_only(self):
        m = SymMatrix.identity(2)
        with self.assertRaises(ValueError):
            m.array[0, 1] = 3.0

    def test_permuted(self):
        a = np.array([[1.0, 0.2, 0.3], [0.2, 2.0, 0.4], [0.3, 0.4, 3.0]])
        m = SymMatrix.from_array(a).permuted([2, 0, 1])
        self.assertEqual(m.entry(0, 0), 3.0)
        self.assertEqual(m.entry(0, 1), 0.3)


class CholeskyTests(SimpleTestCase):
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(SymMatrix.identity(3)).lower, np.eye(3))

    def test_hand_factorization(self):
        lower = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]])).lower
        np.testing.assert_allclose(lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)

    def test_indefinite(self):
        with self.assertRaises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_reconstruction(self):
        rng = np.random.default_rng(3)
        for p in (1, 4, 9):
            a = random_pd(rng, p)
            factor = cholesky(a)
            error = np.linalg.norm(factor.reconstruct().array - a) / np.linalg.norm(a)
            self.assertLessEqual(error, 1e-10)
            self.assertTrue(np.all(np.diag(factor.lower) > 0))

    def test_log_det(self):
        self.assertEqual(log_det(cholesky(SymMatrix.identity(5))), 0.0)
        self.assertAlmostEqual(log_det(cholesky(SymMatrix.diag([2.0, 3.0]))), math.log(6.0), places=12)
        self.assertAlmostEqual(log_det(cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))), math.log(8.0), places=12)


class InverseTests(SimpleTestCase):
    def test_examples(self):
        np.testing.assert_allclose(inverse_pd(SymMatrix.diag([2.0, 4.0])).array, np.diag([0.5, 0.25]))
        np.testing.assert_allclose(inverse_pd(SymMatrix.identity(7)).array, np.eye(7), atol=1e-15)
        np.testing.assert_allclose(inverse_pd(np.array([[1.0, 0.75], [0.75, 1.0]])).array,
                                   np.array([[16.0, -12.0], [-12.0, 16.0]]) / 7.0, atol=1e-12)

    def test_product_is_identity(self):
        rng = np.random.default_rng(11)
        a = random_pd(rng, 6)
        inv = inverse_pd(a).array
        self.assertLess(np.max(np.abs(a @ inv - np.eye(6))), 1e-8 * condition_number(a))

    def test_double_inverse_recovers_matrix(self):
        rng = np.random.default_rng(12)
        for cond in (1.0, 1e2, 1e4, 1e6):
            q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
            a = (q * np.geomspace(1.0, 1.0 / cond, 5)) @ q.T
            a = (a + a.T) / 2.0
            with self.subTest(cond=cond):
                np.testing.assert_allclose(inverse_pd(inverse_pd(a)).array, a, rtol=0, atol=1e-6)


class NormTests(SimpleTestCase):
    def test_spectral_norm_examples(self):
        self.assertAlmostEqual(spectral_norm(np.diag([3.0, -5.0, 1.0])).value, 5.0, places=6)
        self.assertAlmostEqual(spectral_norm(SymMatrix.identity(4)).value, 1.0, places=10)
        self.assertAlmostEqual(spectral_norm(np.array([[0.0, 1.0], [1.0, 0.0]])).value, 1.0, places=10)
        self.assertEqual(spectral_norm(np.zeros((3, 3))).value, 0.0)

    def test_start_orthogonal_to_top_eigenvector(self):
        # the all-ones vector is orthogonal to (1, -1), the eigenvector of -3
        a = np.array([[-1.0, 2.0], [2.0, -1.0]])
        self.assertAlmostEqual(spectral_norm(a).value, 3.0, places=6)

    def test_norm_inequality_chain(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = int(rng.integers(1, 8))
            b = rng.standard_normal((p, p))
            a = (b + b.T) / 2.0
            frob, max_abs = norms(a)
            two = spectral_norm(a).value
            self.assertAlmostEqual(two, float(np.max(np.abs(np.linalg.eigvalsh(a)))), places=5)
            self.assertLessEqual(max_abs, two + 1e-8)
            self.assertLessEqual(two, p * max_abs + 1e-8)
            self.assertLessEqual(two, frob + 1e-8)

    def test_norms(self):
        result = norms(np.eye(4))
        self.assertEqual(result.frob, 2.0)
        self.assertEqual(result.max_abs, 1.0)
