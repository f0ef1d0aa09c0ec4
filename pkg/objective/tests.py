import math

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import DimensionMismatch, NotPositiveDefinite, StructureViolation
from objective.prior import (EdgeSet, Hyperparams, check_structure, log_edge_factor, objective_r,
                             penalty)

H = Hyperparams(q=0.5, v=1.0, lam=1.0)


class HyperparamsTests(SimpleTestCase):
    def test_default_q(self):
        self.assertAlmostEqual(Hyperparams.for_dimension(10).q, math.log(10) / 100)
        self.assertEqual(Hyperparams.for_dimension(10, q=0.2).q, 0.2)

    def test_validation(self):
        for bad in ({'q': 0.0}, {'q': 1.0}, {'q': 0.5, 'v': 0.0}, {'q': 0.5, 'lam': -1.0}):
            with self.assertRaises(ValueError):
                Hyperparams(**bad)


class EdgeSetTests(SimpleTestCase):
    def test_canonical_order(self):
        z = EdgeSet.empty(4)
        order = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        self.assertEqual([z.index(i, j) for i, j in order], list(range(6)))
        self.assertEqual(z.index(3, 1), z.index(1, 3))

    def test_flip_and_count(self):
        z = EdgeSet.empty(4).flip(2).flip(5)
        self.assertEqual(z.count(), 2)
        self.assertEqual(z.pairs(), [(0, 3), (2, 3)])
        self.assertEqual(z.flip(2).flip(2), z)
        self.assertEqual(EdgeSet.from_pairs(4, [(3, 0), (3, 2)]), z)

    def test_keys_are_exact(self):
        keys = {EdgeSet(4, bits).key for bits in np.eye(6, dtype=bool)}
        self.assertEqual(len(keys), 6)


class PenaltyTests(SimpleTestCase):
    def test_examples(self):
        self.assertAlmostEqual(penalty(np.eye(3), EdgeSet.empty(3), H, 10), 0.3)
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        self.assertAlmostEqual(penalty(sigma, EdgeSet.full(2), H, 10), 0.225)
        self.assertEqual(penalty(np.eye(2), EdgeSet.full(2), H, 10), penalty(np.eye(2), EdgeSet.empty(2), H, 10))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            penalty(np.eye(3), EdgeSet.empty(2), H, 10)

    def test_strictly_increasing(self):
        z = EdgeSet.from_pairs(3, [(0, 1)])
        base = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        values = []
        for c in (0.0, 0.1, -0.2, 0.3):
            sigma = base.copy()
            sigma[0, 1] = sigma[1, 0] = c
            values.append(penalty(sigma, z, H, 10))
        self.assertTrue(all(a < b for a, b in zip(values, values[1:])))
        diagonal = [penalty(np.diag([d, 1.0, 1.0]), z, H, 10) for d in (0.5, 1.0, 2.0)]
        self.assertTrue(all(a < b for a, b in zip(diagonal, diagonal[1:])))


class ObjectiveTests(SimpleTestCase):
    def test_examples(self):
        z = EdgeSet.empty(2)
        self.assertAlmostEqual(objective_r(np.eye(2), z, np.eye(2), H, 10), 2.2)
        self.assertAlmostEqual(objective_r(2 * np.eye(2), z, np.eye(2), H, 10), 2 * math.log(2) + 1 + 0.4)

    def test_matches_eigen_decomposition(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((2, 3, 3))
        sigma, s = a @ a.T + np.eye(3), b @ b.T + np.eye(3)
        w, v = np.linalg.eigh(sigma)
        expected = np.sum(np.log(w)) + np.trace(s @ v @ np.diag(1 / w) @ v.T) + penalty(sigma, EdgeSet.full(3), H, 20)
        self.assertAlmostEqual(objective_r(sigma, EdgeSet.full(3), s, H, 20), expected, places=10)

    def test_structure_violation(self):
        sigma = np.array([[1.0, 0.1], [0.1, 1.0]])
        with self.assertRaises(StructureViolation):
            objective_r(sigma, EdgeSet.empty(2), np.eye(2), H, 10)
        check_structure(np.eye(2) + 1e-13 * np.ones((2, 2)), EdgeSet.empty(2))

    def test_not_positive_definite(self):
        with self.assertRaises(NotPositiveDefinite):
            objective_r(np.array([[1.0, 2.0], [2.0, 1.0]]), EdgeSet.full(2), np.eye(2), H, 10)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 4))
        s = a @ a.T + np.eye(4)
        z = EdgeSet.from_pairs(4, [(0, 1), (2, 3)])
        sigma = np.eye(4) * 2.0
        sigma[0, 1] = sigma[1, 0] = 0.3
        sigma[2, 3] = sigma[3, 2] = -0.4
        perm = [2, 0, 3, 1]
        permuted = objective_r(sigma[np.ix_(perm, perm)], z.permuted(perm), s[np.ix_(perm, perm)], H, 30)
        self.assertAlmostEqual(objective_r(sigma, z, s, H, 30), permuted, places=10)

    def test_superset_structure(self):
        sigma = np.diag([1.0, 2.0, 3.0])
        sigma[0, 1] = sigma[1, 0] = 0.2
        small, large = EdgeSet.from_pairs(3, [(0, 1)]), EdgeSet.full(3)
        self.assertEqual(objective_r(sigma, small, np.eye(3), H, 10), objective_r(sigma, large, np.eye(3), H, 10))


class EdgeFactorTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(log_edge_factor(EdgeSet.empty(3), H), 0.0)
        h = Hyperparams(q=0.5, v=1 / math.sqrt(2 * math.pi))
        self.assertAlmostEqual(log_edge_factor(EdgeSet.from_pairs(3, [(0, 1)]), h), 0.0, places=12)
        self.assertAlmostEqual(log_edge_factor(EdgeSet.from_pairs(3, [(0, 1), (1, 2)]), H), -1.83788, places=5)
