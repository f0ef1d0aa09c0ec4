import os
import time
import unittest
from unittest import mock

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from core.exceptions import GenerationFailed
from core.matrixio import write_json
from objective.prior import Hyperparams
from sampler.services import ChainConfig
from simbench.generators import ModelSpec, gen_model, sample_cov, sample_mvn, truth_rng
from simbench.metrics import loss_metrics, structure_metrics, summarize
from simbench.services import (AllReplicationsFailed, BenchmarkService, Estimator, parse_estimators,
                               run_benchmark)
from symmat.matrices import cholesky, condition_number

DESK_TESTS = os.environ.get('COVLAP_DESK_TESTS') == '1'


def save_desk_run(name, payload):
    path = os.path.join(settings.COVLAP_HOME, 'desk-runs', f"{name}.json")
    write_json(path, payload)
    return path


def generate(model_id, p, seed=0):
    return gen_model(ModelSpec(model_id, p, 10, seed), truth_rng(seed)).array


class GeneratorTests(SimpleTestCase):
    def test_second_order_moving_average(self):
        expected = np.array([[1, .5, .25, 0], [.5, 1, .5, .25], [.25, .5, 1, .5], [0, .25, .5, 1]])
        np.testing.assert_array_equal(generate(4, 4), expected)

    def test_inverse_toeplitz(self):
        np.testing.assert_allclose(generate(5, 2), np.array([[16, -12], [-12, 16]]) / 7, atol=1e-12)

    def test_inverse_toeplitz_is_tridiagonal(self):
        p, rho = 10, 0.75
        direct = np.diag(np.r_[1.0, np.full(p - 2, 1 + rho ** 2), 1.0])
        k = np.arange(p - 1)
        direct[k, k + 1] = direct[k + 1, k] = -rho
        direct /= 1 - rho ** 2
        self.assertLess(np.max(np.abs(generate(5, p) - direct)), 1e-8)

    def test_condition_number_targeting(self):
        for model_id, p in ((1, 30), (3, 50), (3, 7)):
            sigma = generate(model_id, p, seed=p)
            self.assertGreaterEqual(condition_number(sigma), 0.9 * p)
            self.assertLessEqual(condition_number(sigma), 1.1 * p)

    def test_moving_average_band(self):
        sigma = generate(3, 10)
        self.assertTrue(np.allclose(np.diag(sigma, 1), 0.4))
        self.assertTrue(np.all(np.triu(sigma, 2) == 0))

    def test_unit_diagonals(self):
        for model_id in (2, 4):
            np.testing.assert_array_equal(np.diag(generate(model_id, 20, seed=3)), np.ones(20))

    def test_all_models_are_pd(self):
        for model_id in (1, 2, 3, 4, 5):
            for p in (2, 5, 25):
                cholesky(generate(model_id, p, seed=model_id + p))

    def test_generation_failure(self):
        with mock.patch('simbench.generators.diagonal_for_condition', return_value=None):
            with self.assertRaises(GenerationFailed):
                generate(1, 40)

    def test_spec_validation(self):
        for bad in ((6, 5, 10), (1, 1, 10), (1, 5, 1)):
            with self.assertRaises(ValueError):
                ModelSpec(*bad)

    def test_same_seed_same_truth(self):
        np.testing.assert_array_equal(generate(2, 15, seed=4), generate(2, 15, seed=4))


class SamplingTests(SimpleTestCase):
    def test_identity_moments(self):
        x = sample_mvn(100000, np.eye(3), np.random.default_rng(0))
        variances = np.var(x, axis=0)
        self.assertTrue(np.all(np.abs(variances - 1.0) < 5 * np.sqrt(2.0 / 100000)))

    def test_single_row(self):
        self.assertEqual(sample_mvn(1, np.eye(4), np.random.default_rng(0)).shape, (1, 4))

    def test_reproducible(self):
        sigma = generate(4, 5)
        first = sample_mvn(20, sigma, np.random.default_rng(9))
        second = sample_mvn(20, sigma, np.random.default_rng(9))
        np.testing.assert_array_equal(first, second)

    def test_sample_cov_examples(self):
        np.testing.assert_array_equal(sample_cov(np.array([[1.0, 0.0], [-1.0, 0.0]])).array, [[1.0, 0.0], [0.0, 0.0]])
        a, b = 2.0, -3.0
        np.testing.assert_array_equal(sample_cov(np.array([[a, b]])).array, [[a * a, a * b], [a * b, b * b]])

    def test_sample_cov_is_psd(self):
        x = np.random.default_rng(1).standard_normal((5, 8))
        s = sample_cov(x).array
        np.testing.assert_array_equal(s, s.T)
        self.assertGreaterEqual(np.linalg.eigvalsh(s)[0], -1e-12)


class MetricTests(SimpleTestCase):
    def test_perfect_estimate(self):
        sigma = generate(3, 6)
        self.assertEqual(tuple(structure_metrics(sigma, sigma)), (1.0, 1.0))
        self.assertEqual(tuple(loss_metrics(sigma, sigma)), (0.0, 0.0, 0.0))

    def test_spurious_pair(self):
        truth = np.eye(3)
        truth[0, 1] = truth[1, 0] = 0.5
        estimate = truth.copy()
        estimate[1, 2] = estimate[2, 1] = 0.2
        metrics = structure_metrics(estimate, truth)
        self.assertEqual((metrics.se, metrics.sp), (1.0, 0.5))

    def test_diagonal_estimate(self):
        metrics = structure_metrics(np.eye(4), generate(4, 4))
        self.assertEqual((metrics.se, metrics.sp), (0.0, 1.0))

    def test_threshold(self):
        truth = np.eye(2)
        estimate = np.array([[1.0, 0.001], [0.001, 1.0]])
        self.assertEqual(structure_metrics(estimate, truth).sp, 1.0)
        self.assertEqual(structure_metrics(estimate, truth, threshold=0.0).sp, 0.0)

    def test_identity_difference(self):
        self.assertEqual(tuple(loss_metrics(2 * np.eye(4), np.eye(4))), (0.5, 1.0, 1.0))

    def test_loss_inequalities(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = int(rng.integers(2, 7))
            a, b = rng.standard_normal((2, p, p))
            hat, truth = a + a.T, b + b.T
            rmse, mnorm, norm2 = loss_metrics(hat, truth)
            self.assertLessEqual(mnorm, norm2 + 1e-8)
            self.assertLessEqual(norm2, p * mnorm + 1e-8)
            self.assertAlmostEqual(rmse, np.linalg.norm(hat - truth) / p)

    def test_summary_sd(self):
        summary = summarize([{'estimator': 'x', 'sp': 1.0, 'se': 0.5, 'rmse': 0.1, 'mnorm': 0.2, 'norm2': 0.3}])
        self.assertEqual(summary['x']['sp'].sd, 0.0)
        summary = summarize([{'estimator': 'x', 'sp': v, 'se': v, 'rmse': v, 'mnorm': v, 'norm2': v} for v in (1.0, 3.0)])
        self.assertEqual(summary['x']['rmse'].mean, 2.0)
        self.assertAlmostEqual(summary['x']['rmse'].sd, np.sqrt(2.0))


class BenchmarkTests(SimpleTestCase):
    def setUp(self):
        self.spec = ModelSpec(3, 6, 80, seed=5)
        self.h = Hyperparams.for_dimension(6)
        self.cfg = ChainConfig(burn_in=50, iterations=200, seed=5)

    def test_report_shape(self):
        report = run_benchmark(self.spec, 2, self.h, self.cfg, Estimator.values)
        self.assertEqual((report['model'], report['p'], report['n'], report['reps'], report['failures']), (3, 6, 80, 2, 0))
        self.assertEqual(list(report['estimators']), ['proposed-mpm', 'proposed-map', 'sample-cov'])
        for metrics in report['estimators'].values():
            self.assertEqual(set(metrics), {'sp', 'se', 'rmse', 'mnorm', 'norm2'})
            self.assertTrue(0.0 <= metrics['sp']['mean'] <= 1.0)

    def test_single_replication_has_zero_sd(self):
        report = run_benchmark(self.spec, 1, self.h, self.cfg, ('sample-cov',))
        self.assertTrue(all(m['sd'] == 0.0 for m in report['estimators']['sample-cov'].values()))

    def test_parallel_matches_serial(self):
        serial = run_benchmark(self.spec, 3, self.h, self.cfg, Estimator.values, jobs=1)
        parallel = run_benchmark(self.spec, 3, self.h, self.cfg, Estimator.values, jobs=3)
        self.assertEqual(serial, parallel)

    def test_failed_replications_are_counted(self):
        service = BenchmarkService(self.spec, 3, self.h, self.cfg, ('sample-cov',))
        real = service.run_replication

        def flaky(r):
            if r == 1:
                raise GenerationFailed("boom")
            return real(r)

        service.run_replication = flaky
        with self.assertLogs('core.services', level='WARNING'):
            report = service.run()
        self.assertEqual(report['failures'], 1)

    def test_all_failed(self):
        service = BenchmarkService(self.spec, 2, self.h, self.cfg, ('sample-cov',))
        service.run_replication = mock.Mock(side_effect=GenerationFailed("boom"))
        with self.assertLogs('core.services', level='WARNING'):
            with self.assertRaises(AllReplicationsFailed):
                service.run()

    def test_parse_estimators(self):
        self.assertEqual(parse_estimators('sample-cov, proposed-mpm'), ('sample-cov', 'proposed-mpm'))
        with self.assertRaises(ValueError):
            parse_estimators('lasso')

    @unittest.skipUnless(DESK_TESTS, "set COVLAP_DESK_TESTS=1 for the desk-scale benchmark")
    def test_desk_scale_moving_average(self):
        spec = ModelSpec(3, 30, 120, seed=1)
        started = time.perf_counter()
        report = run_benchmark(spec, 10, Hyperparams.for_dimension(30), ChainConfig(seed=1),
                               ('proposed-mpm', 'proposed-map', 'sample-cov'), jobs=os.cpu_count() or 1)
        save_desk_run('model3-p30', {'elapsed_seconds': time.perf_counter() - started,
                                     'jobs': os.cpu_count() or 1, 'report': report})
        proposed, baseline = report['estimators']['proposed-mpm'], report['estimators']['sample-cov']
        self.assertGreaterEqual(proposed['sp']['mean'], 0.95)
        self.assertGreaterEqual(proposed['se']['mean'], 0.95)
        self.assertLessEqual(proposed['rmse']['mean'], 0.04)
        self.assertLessEqual(baseline['sp']['mean'], 0.10)
