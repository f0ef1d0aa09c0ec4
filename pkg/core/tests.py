import io
import json
import os
import pickle
import shutil
import tempfile
from unittest import mock

import numpy as np
from django.core.management import call_command, execute_from_command_line
from django.core.management.base import CommandError
from django.db import DatabaseError
from django.test import SimpleTestCase, TestCase

from core.config import load_run_config, resolve_seed
from core.exceptions import (ConfigError, DataFormatError, NonpositiveU, NotPositiveDefinite,
                             StructureViolation)
from core.management.commands.fit import sigma_path_for
from core.matrixio import dumps_json, read_matrix_csv, write_matrix_csv
from core.models import RunRecord
from core.services import ProgressTracker, run_replications, track_run

SHORT_CHAIN = {"chain": {"burn_in": 10, "iterations": 40}}


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)
        super().tearDown()

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write_config(self, payload, name='config.json'):
        path = self.path(name)
        with open(path, 'w') as f:
            json.dump(payload, f)
        return path

    def read_bytes(self, name):
        with open(self.path(name), 'rb') as f:
            return f.read()


class MatrixIoTests(TempDirMixin, SimpleTestCase):
    def test_csv_preserves_values(self):
        a = np.random.default_rng(0).standard_normal((3, 4)) * 1e-7
        write_matrix_csv(self.path('a.csv'), a)
        np.testing.assert_array_equal(read_matrix_csv(self.path('a.csv')), a)

    def test_missing_value_reports_line(self):
        with open(self.path('bad.csv'), 'w') as f:
            f.write("1.0,2.0\n3.0,\n")
        with self.assertRaises(DataFormatError) as ctx:
            read_matrix_csv(self.path('bad.csv'))
        self.assertEqual(ctx.exception.line, 2)

    def test_non_numeric(self):
        with open(self.path('bad.csv'), 'w') as f:
            f.write("1.0,abc\n")
        with self.assertRaises(DataFormatError):
            read_matrix_csv(self.path('bad.csv'))

    def test_json_non_finite_is_null(self):
        text = dumps_json({'a': float('-inf'), 'b': [1.0, float('nan')], 'c': np.float64(2.5), 'd': np.int64(3)})
        self.assertTrue(text.endswith('\n'))
        self.assertEqual(json.loads(text), {'a': None, 'b': [1.0, None], 'c': 2.5, 'd': 3})


class ConfigTests(TempDirMixin, SimpleTestCase):
    def test_defaults(self):
        config = load_run_config()
        self.assertEqual(config.chain_config(3).burn_in, 3000)
        self.assertEqual(config.train_counts(), (72, 119))
        self.assertAlmostEqual(config.hyperparams_for(10).q, np.log(10) / 100)

    def test_lambda_alias(self):
        config = load_run_config(self.write_config({"prior": {"lambda": 2.5, "v": 0.5}, "zero_threshold": 0.01}))
        h = config.hyperparams_for(4)
        self.assertEqual((h.lam, h.v, h.zero_threshold), (2.5, 0.5, 0.01))

    def test_rejected_configs(self):
        for payload in ({"unknown": 1}, {"prior": {"q": 1.5}}, {"chain": {"selector": "median"}}, [1, 2]):
            with self.subTest(payload=payload), self.assertRaises(ConfigError):
                load_run_config(self.write_config(payload))
        with open(self.path('broken.json'), 'w') as f:
            f.write('{"prior": ')
        with self.assertRaises(ConfigError):
            load_run_config(self.path('broken.json'))
        with self.assertRaises(ConfigError):
            load_run_config(self.path('absent.json'))

    def test_seed_precedence(self):
        with mock.patch.dict(os.environ):
            os.environ.pop('COVLAP_SEED', None)
            self.assertEqual(resolve_seed(), 0)
            self.assertEqual(resolve_seed(None, 7), 7)
            os.environ['COVLAP_SEED'] = '9'
            self.assertEqual(resolve_seed(None, 7), 9)
            self.assertEqual(resolve_seed(5, 7), 5)
            os.environ['COVLAP_SEED'] = 'nine'
            with self.assertRaises(ConfigError):
                resolve_seed()
        with self.assertRaises(ConfigError):
            resolve_seed(-1)
        self.assertEqual(resolve_seed(2 ** 64 - 1), 2 ** 64 - 1)

    def test_sigma_path(self):
        self.assertEqual(sigma_path_for('out/result.json'), 'out/result.sigma.csv')
        self.assertEqual(sigma_path_for('result'), 'result.sigma.csv')


def square_or_fail(r):
    if r == 2:
        raise NonpositiveU(column=r, u=-0.5)
    return r * r


class ReplicationRunnerTests(SimpleTestCase):
    def test_results_in_replication_order(self):
        for jobs in (1, 4):
            with self.assertLogs('core.services', level='INFO') as logs:
                results = run_replications(square_or_fail, 6, jobs=jobs, run_id=f'test-{jobs}')
            self.assertEqual([r for i, r in enumerate(results) if i != 2], [0, 1, 9, 16, 25])
            self.assertIsInstance(results[2], NonpositiveU)
            self.assertEqual((results[2].column, results[2].u), (2, -0.5))
            self.assertTrue(any('(6/6 complete, 100%)' in line for line in logs.output))
            self.assertTrue(any('5/6 replications succeeded' in line for line in logs.output))
            self.assertEqual(ProgressTracker.get(f'test-{jobs}')['status'], 'Pending')

    def test_tracker_counts(self):
        ProgressTracker.start('counts', 4)
        ProgressTracker.advance('counts')
        snapshot = ProgressTracker.advance('counts', failed=True)
        self.assertEqual((snapshot['done'], snapshot['failed'], snapshot['percent']), (2, 1, 50))
        self.assertEqual(ProgressTracker.finish('counts')['status'], 'Completed')

    def test_errors_survive_pickling(self):
        for error in (NonpositiveU(3, -1.0), StructureViolation(0, 2, 0.1),
                      NotPositiveDefinite("pivot 1", pivot=1), DataFormatError("bad", 'x.csv', 4)):
            copy = pickle.loads(pickle.dumps(error))
            self.assertEqual((type(copy), str(copy)), (type(error), str(error)))
        self.assertEqual(pickle.loads(pickle.dumps(DataFormatError("bad", 'x.csv', 4))).line, 4)


class RunRecordTests(TestCase):
    def test_completed_and_failed(self):
        with track_run('gen', {'p': 3}, 'x.csv'):
            pass
        with self.assertRaises(RuntimeError), track_run('fit', {}, 'y.json'):
            raise RuntimeError("stop")
        self.assertEqual(RunRecord.objects.get(command='gen').status, 'COMPLETED')
        failed = RunRecord.objects.get(command='fit')
        self.assertEqual((failed.status, failed.log_message), ('FAILED', 'stop'))
        self.assertIsNotNone(failed.finished_at)

    def test_database_unavailable(self):
        with mock.patch.object(RunRecord.objects, 'create', side_effect=DatabaseError("locked")):
            with self.assertLogs('core.services', level='WARNING'), track_run('gen', {}) as handle:
                self.assertIsNone(handle.pk)


class GenCommandTests(TempDirMixin, TestCase):
    def gen(self, suffix, seed=11):
        call_command('gen', model=3, p=6, n=25, seed=seed,
                     out=self.path(f'x{suffix}.csv'), truth=self.path(f't{suffix}.csv'))

    def test_rerun_is_byte_identical(self):
        self.gen('a')
        self.gen('b')
        self.assertEqual(self.read_bytes('xa.csv'), self.read_bytes('xb.csv'))
        self.assertEqual(self.read_bytes('ta.csv'), self.read_bytes('tb.csv'))
        self.gen('c', seed=12)
        self.assertNotEqual(self.read_bytes('xa.csv'), self.read_bytes('xc.csv'))

    def test_outputs(self):
        self.gen('a')
        truth = read_matrix_csv(self.path('ta.csv'))
        np.testing.assert_array_equal(np.diag(truth, 1), np.full(5, 0.4))
        self.assertEqual(len(set(np.diag(truth))), 1)
        self.assertAlmostEqual(np.linalg.cond(truth), 6.0, places=8)
        self.assertEqual(read_matrix_csv(self.path('xa.csv')).shape, (25, 6))
        record = RunRecord.objects.get(command='gen')
        self.assertEqual((record.status, record.arguments['model']), ('COMPLETED', 3))

    def test_invalid_dimension_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('gen', model=3, p=0, n=5, out=self.path('x.csv'), truth=self.path('t.csv'))
        self.assertEqual(ctx.exception.returncode, 2)


class FitCommandTests(TempDirMixin, TestCase):
    def setUp(self):
        super().setUp()
        call_command('gen', model=3, p=4, n=60, seed=2, out=self.path('x.csv'), truth=self.path('t.csv'))

    def test_fit_writes_result_and_sigma(self):
        config = self.write_config({"chain": {"burn_in": 10, "iterations": 40, "selector": "map"}})
        call_command('fit', data=self.path('x.csv'), config=config, out=self.path('result.json'), seed=3)
        with open(self.path('result.json')) as f:
            result = json.load(f)
        self.assertEqual(result['selector'], 'map')
        self.assertEqual(len(result['z']), 6)
        self.assertEqual(len(result['inclusion_freq']), 6)
        self.assertEqual(result['sigma_csv'], self.path('result.sigma.csv'))
        self.assertEqual(result['config']['chain']['seed'], 3)
        sigma = read_matrix_csv(self.path('result.sigma.csv'))
        self.assertEqual(sigma.shape, (4, 4))
        np.testing.assert_array_equal(sigma, sigma.T)

    def test_rerun_is_byte_identical(self):
        config = self.write_config(SHORT_CHAIN)
        for name in ('a.json', 'b.json'):
            call_command('fit', data=self.path('x.csv'), config=config, out=self.path(name), seed=3)
        self.assertEqual(self.read_bytes('a.sigma.csv'), self.read_bytes('b.sigma.csv'))

    def test_config_error_exit_code(self):
        config = self.write_config({"chain": {"burn_in": -1}})
        with self.assertRaises(CommandError) as ctx:
            call_command('fit', data=self.path('x.csv'), config=config, out=self.path('r.json'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertEqual(json.loads(str(ctx.exception))['error'], 'ConfigError')
        self.assertFalse(os.path.exists(self.path('r.json')))

    def test_missing_data_exit_code(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('fit', data=self.path('absent.csv'), out=self.path('r.json'))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertEqual(RunRecord.objects.get(command='fit').status, 'FAILED')


class BenchCommandTests(TempDirMixin, TestCase):
    def test_parallel_output_matches_serial(self):
        config = self.write_config(SHORT_CHAIN)
        for jobs, name in ((1, 'serial.json'), (2, 'parallel.json')):
            call_command('bench', model=4, p=5, n=30, reps=2, seed=4, config=config,
                         out=self.path(name), jobs=jobs)
        self.assertEqual(self.read_bytes('serial.json'), self.read_bytes('parallel.json'))
        with open(self.path('serial.json')) as f:
            report = json.load(f)
        self.assertEqual((report['model'], report['reps']), (4, 2))
        self.assertEqual(set(report['estimators']), {'proposed-mpm', 'proposed-map', 'sample-cov'})

    def test_unknown_estimator(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('bench', model=4, p=5, n=30, reps=1, estimators='oracle', out=self.path('r.json'))
        self.assertEqual(ctx.exception.returncode, 2)


class LdaCommandTests(TempDirMixin, TestCase):
    def write_wdbc(self, rows):
        with open(self.path('wdbc.data'), 'w') as f:
            f.write(''.join(row + '\n' for row in rows))
        return self.path('wdbc.data')

    def test_truncated_file(self):
        rng = np.random.default_rng(0)
        good = ','.join(['1', 'M'] + [f"{v:.3f}" for v in rng.uniform(1, 5, 30)])
        path = self.write_wdbc([good, ','.join(good.split(',')[:10])])
        with self.assertRaises(CommandError) as ctx:
            call_command('lda', wdbc=path, out=self.path('lda.json'))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn(':2:', str(ctx.exception))

    def test_small_experiment(self):
        rng = np.random.default_rng(1)
        rows = []
        for i in range(40):
            diagnosis = 'M' if i % 2 else 'B'
            features = rng.standard_normal(30) + (3.0 if diagnosis == 'M' else 0.0) + 10.0
            rows.append(','.join([str(i), diagnosis] + [repr(float(v)) for v in features]))
        config = self.write_config({"chain": {"burn_in": 5, "iterations": 20},
                                    "lda": {"train_counts": [12, 12]}})
        call_command('lda', wdbc=self.write_wdbc(rows), reps=2, seed=1, config=config,
                     estimator='sample-cov', out=self.path('lda.json'))
        with open(self.path('lda.json')) as f:
            report = json.load(f)
        self.assertEqual((report['reps'], report['estimator'], report['standardize']), (2, 'sample-cov', False))
        self.assertEqual(len(report['per_rep']), 2)


class CommandLineTests(SimpleTestCase):
    def test_bad_model_exits_with_usage_code(self):
        with mock.patch('sys.stderr', new_callable=io.StringIO), self.assertRaises(SystemExit) as ctx:
            execute_from_command_line(['manage.py', 'gen', '--model', '9', '--p', '3', '--n', '5',
                                       '--out', 'x.csv', '--truth', 't.csv'])
        self.assertEqual(ctx.exception.code, 2)
