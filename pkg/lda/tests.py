import os
import shutil
import tempfile
import time
import unittest

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from core.exceptions import DataFormatError, EmptyTestSet, InsufficientClassCount
from core.matrixio import write_json
from lda.services import (LabeledDataset, LdaModel, error_rate, fit_lda, load_wdbc, predict,
                          predict_many, run_lda_experiment, stratified_split)
from objective.prior import Hyperparams
from sampler.services import ChainConfig
from symmat.matrices import SymMatrix, cholesky

WDBC_PATH = os.environ.get('COVLAP_WDBC')
DESK_TESTS = os.environ.get('COVLAP_DESK_TESTS') == '1'

SHORT_CHAIN = ChainConfig(burn_in=20, iterations=100, seed=1)


def save_desk_run(name, payload):
    path = os.path.join(settings.COVLAP_HOME, 'desk-runs', f"{name}.json")
    write_json(path, payload)
    return path


def two_blobs(n_per_class, p, shift, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n_per_class, p))
    x1 = rng.standard_normal((n_per_class, p)) + shift
    return LabeledDataset(np.vstack([x0, x1]), np.r_[np.zeros(n_per_class, dtype=int), np.ones(n_per_class, dtype=int)])


def identity_model(mu0, mu1, log_pi0=np.log(0.5), log_pi1=np.log(0.5)):
    p = len(mu0)
    return LdaModel(mu0=np.asarray(mu0, float), mu1=np.asarray(mu1, float), omega_hat=SymMatrix.identity(p),
                    log_pi0=log_pi0, log_pi1=log_pi1, scale=np.ones(p))


def wdbc_line(i, diagnosis, rng):
    return ','.join([str(840000 + i), diagnosis] + [f"{v:.4f}" for v in rng.uniform(0.1, 30, 30)])


class WdbcLoaderTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def write(self, lines):
        path = os.path.join(self.tmp, 'wdbc.data')
        with open(path, 'w') as f:
            f.write('\n'.join(lines) + '\n')
        return path

    def test_load(self):
        path = self.write([wdbc_line(i, d, self.rng) for i, d in enumerate('MBBMB')])
        data = load_wdbc(path)
        self.assertEqual(data.features.shape, (5, 30))
        np.testing.assert_array_equal(data.labels, [1, 0, 0, 1, 0])

    def test_truncated_line(self):
        lines = [wdbc_line(i, 'M', self.rng) for i in range(3)]
        lines[2] = ','.join(lines[2].split(',')[:20])
        with self.assertRaises(DataFormatError) as ctx:
            load_wdbc(self.write(lines))
        self.assertEqual(ctx.exception.line, 3)

    def test_bad_diagnosis(self):
        lines = [wdbc_line(0, 'M', self.rng), wdbc_line(1, 'X', self.rng)]
        with self.assertRaises(DataFormatError) as ctx:
            load_wdbc(self.write(lines))
        self.assertEqual(ctx.exception.line, 2)

    def test_missing_and_empty_files(self):
        with self.assertRaises(DataFormatError):
            load_wdbc(os.path.join(self.tmp, 'absent.data'))
        path = os.path.join(self.tmp, 'empty.data')
        open(path, 'w').close()
        with self.assertRaises(DataFormatError):
            load_wdbc(path)


class SplitTests(SimpleTestCase):
    def setUp(self):
        self.data = two_blobs(20, 3, 1.0, seed=1)

    def test_counts(self):
        train, test = stratified_split(self.data, (5, 8), np.random.default_rng(0))
        self.assertEqual(train.class_counts(), (5, 8))
        self.assertEqual(test.class_counts(), (15, 12))

    def test_full_classes_leave_empty_test(self):
        _, test = stratified_split(self.data, (20, 20), np.random.default_rng(0))
        self.assertEqual(len(test), 0)

    def test_insufficient(self):
        with self.assertRaises(InsufficientClassCount):
            stratified_split(self.data, (21, 5), np.random.default_rng(0))

    def test_deterministic(self):
        first, _ = stratified_split(self.data, (5, 5), np.random.default_rng(4))
        second, _ = stratified_split(self.data, (5, 5), np.random.default_rng(4))
        np.testing.assert_array_equal(first.features, second.features)


class PredictTests(SimpleTestCase):
    def test_class_mean_goes_to_its_class(self):
        model = identity_model([0.0, 0.0], [2.0, 1.0])
        self.assertEqual(predict(model, [2.0, 1.0]), 1)
        self.assertEqual(predict(model, [0.0, 0.0]), 0)

    def test_equal_means_use_priors(self):
        self.assertEqual(predict(identity_model([1.0], [1.0], np.log(0.3), np.log(0.7)), [5.0]), 1)
        self.assertEqual(predict(identity_model([1.0], [1.0], np.log(0.7), np.log(0.3)), [5.0]), 0)

    def test_tie_goes_to_class_zero(self):
        self.assertEqual(predict(identity_model([0.0, 0.0], [2.0, 0.0]), [1.0, 5.0]), 0)

    def test_perpendicular_bisector(self):
        model = identity_model([0.0, 0.0], [2.0, 0.0])
        x = np.array([[0.9, 3.0], [1.1, -3.0], [0.99, 0.0], [1.01, 10.0]])
        np.testing.assert_array_equal(predict_many(model, x), [0, 1, 0, 1])

    def test_constant_shift_of_scores(self):
        base = identity_model([0.0, 1.0], [1.0, 0.0], np.log(0.4), np.log(0.6))
        shifted = identity_model([0.0, 1.0], [1.0, 0.0], np.log(0.4) + 3.0, np.log(0.6) + 3.0)
        x = np.random.default_rng(0).standard_normal((50, 2))
        np.testing.assert_array_equal(predict_many(base, x), predict_many(shifted, x))

    def test_error_rate(self):
        model = identity_model([0.0], [4.0])
        test = LabeledDataset(np.array([[0.0], [4.0], [-1.0]]), np.array([0, 1, 0]))
        self.assertEqual(error_rate(model, test), 0.0)
        self.assertEqual(error_rate(model, LabeledDataset(test.features, 1 - test.labels)), 1.0)
        with self.assertRaises(EmptyTestSet):
            error_rate(model, LabeledDataset(np.zeros((0, 1)), np.zeros(0, dtype=int)))


class FitTests(SimpleTestCase):
    def test_separated_classes(self):
        data = two_blobs(60, 3, 6.0, seed=2)
        model = fit_lda(data, Hyperparams.for_dimension(3), SHORT_CHAIN, 'sample-cov')
        self.assertEqual(error_rate(model, data), 0.0)
        self.assertAlmostEqual(np.exp(model.log_pi0) + np.exp(model.log_pi1), 1.0, places=12)

    def test_single_feature_threshold(self):
        data = two_blobs(40, 1, 5.0, seed=3)
        model = fit_lda(data, Hyperparams.for_dimension(1), SHORT_CHAIN, 'proposed-mpm')
        midpoint = (model.mu0[0] + model.mu1[0]) / 2
        self.assertEqual(predict(model, [midpoint - 0.5]), 0)
        self.assertEqual(predict(model, [midpoint + 0.5]), 1)

    def test_proposed_estimator_is_pd(self):
        data = two_blobs(40, 5, 1.0, seed=4)
        for estimator in ('proposed-mpm', 'proposed-map'):
            model = fit_lda(data, Hyperparams.for_dimension(5), SHORT_CHAIN, estimator)
            cholesky(model.sigma_hat)
            cholesky(model.omega_hat)

    def test_missing_class(self):
        data = LabeledDataset(np.ones((4, 2)), np.zeros(4, dtype=int))
        with self.assertRaises(InsufficientClassCount):
            fit_lda(data, Hyperparams.for_dimension(2), SHORT_CHAIN, 'sample-cov')

    def test_standardize(self):
        data = two_blobs(30, 2, 2.0, seed=5)
        data = LabeledDataset(data.features * np.array([1.0, 100.0]), data.labels)
        model = fit_lda(data, Hyperparams.for_dimension(2), SHORT_CHAIN, 'sample-cov', standardize=True)
        np.testing.assert_allclose(model.scale, data.features.std(axis=0, ddof=1))


class ExperimentTests(SimpleTestCase):
    def setUp(self):
        self.data = two_blobs(30, 4, 1.5, seed=6)
        self.h = Hyperparams.for_dimension(4)

    def test_report(self):
        report = run_lda_experiment(self.data, 2, 7, self.h, SHORT_CHAIN, ('proposed-mpm', 'sample-cov'),
                                    train_counts=(10, 10))
        self.assertEqual(report['reps'], 2)
        self.assertEqual(report['estimator'], 'proposed-mpm')
        self.assertEqual(len(report['per_rep']), 2)
        self.assertEqual(set(report['estimators']), {'proposed-mpm', 'sample-cov'})
        self.assertTrue(0.0 <= report['error_rate']['mean'] <= 1.0)

    def test_parallel_matches_serial(self):
        args = (self.data, 3, 7, self.h, SHORT_CHAIN, ('proposed-map', 'sample-cov'))
        self.assertEqual(run_lda_experiment(*args, train_counts=(10, 10), jobs=1),
                         run_lda_experiment(*args, train_counts=(10, 10), jobs=3))

    def test_estimator_failure_is_counted(self):
        data = two_blobs(10, 3, 1.0, seed=8)
        data.features[:, 2] = 0.0
        with self.assertLogs('lda.services', level='WARNING'):
            report = run_lda_experiment(data, 2, 1, Hyperparams.for_dimension(3), SHORT_CHAIN,
                                        ('sample-cov',), train_counts=(5, 5))
        self.assertEqual(report['failures'], 2)
        self.assertEqual(report['per_rep'], [None, None])

    @unittest.skipUnless(DESK_TESTS and WDBC_PATH, "set COVLAP_DESK_TESTS=1 and COVLAP_WDBC=<path>")
    def test_desk_scale_wdbc(self):
        data = load_wdbc(WDBC_PATH)
        self.assertEqual(data.class_counts(), (212, 357))
        runs = {}
        for standardize in (False, True):
            started = time.perf_counter()
            report = run_lda_experiment(data, 3, 1, Hyperparams.for_dimension(30), ChainConfig(seed=1),
                                        ('proposed-mpm', 'proposed-map', 'sample-cov'),
                                        standardize=standardize, jobs=os.cpu_count() or 1)
            runs['standardized' if standardize else 'raw'] = {
                'elapsed_seconds': time.perf_counter() - started, 'report': report}
        save_desk_run('wdbc-lda', runs)

        raw = runs['raw']['report']['estimators']
        proposed = raw['proposed-mpm']['error_rate']['mean']
        baseline = raw['sample-cov']['error_rate']['mean']
        self.assertLessEqual(proposed, 0.10)
        self.assertLess(proposed, baseline)
