import itertools
import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from bcd.solver import gamma_hat
from core.exceptions import InfeasibleInitialModel
from laplace import approximation
from laplace.approximation import ModelScore, ScoreCache, log_model_prob
from objective.prior import EdgeSet, Hyperparams, check_structure
from sampler.services import (ChainConfig, ChainSample, ChainTrace, accept_move, estimate, mh_run,
                              propose, select_map, select_mpm)
from simbench.generators import ModelSpec, gen_model, sample_cov, sample_mvn
from simbench.metrics import structure_metrics
from symmat.matrices import cholesky


def data_cov(sigma0, n, seed):
    rng = np.random.default_rng(seed)
    return sample_cov(sample_mvn(n, sigma0, rng)).array


def trace_of(dim, structures, scores, freq=None):
    samples = tuple(ChainSample(z, lp, False) for z, lp in zip(structures, scores))
    if freq is None:
        freq = np.mean([z.bits for z in structures], axis=0)
    return ChainTrace(dim=dim, samples=samples, acceptance_rate=0.0, inclusion_freq=np.asarray(freq))


class ChainConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = ChainConfig()
        self.assertEqual((cfg.burn_in, cfg.iterations, cfg.selector, cfg.init), (3000, 12000, 'mpm', 'empty'))

    def test_validation(self):
        for bad in ({'burn_in': -1}, {'iterations': 0}, {'seed': -1}, {'selector': 'mode'}, {'init': 'half'}):
            with self.assertRaises(ValueError):
                ChainConfig(**bad)

    def test_replication_streams(self):
        cfg = ChainConfig(seed=10)
        self.assertEqual(cfg.for_replication(0).seed, 10)
        self.assertEqual(cfg.for_replication(3).seed, 10 ^ 3)


class ProposeTests(SimpleTestCase):
    def test_single_pair_always_flips(self):
        rng = np.random.default_rng(0)
        z = EdgeSet.empty(2)
        for _ in range(10):
            z_next = propose(z, rng)
            self.assertNotEqual(z_next.bits[0], z.bits[0])
            z = z_next

    def test_flip_index_is_uniform(self):
        rng = np.random.default_rng(1)
        z = EdgeSet.empty(4)
        counts = np.zeros(6)
        for _ in range(60000):
            counts += propose(z, rng).bits
        self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)

    def test_involution(self):
        z = EdgeSet.from_pairs(4, [(0, 2)])
        self.assertEqual(z.flip(3).flip(3), z)


class AcceptMoveTests(SimpleTestCase):
    def test_better_candidate_always_accepted(self):
        self.assertTrue(accept_move(-10.0, -9.0, 0.999999))

    def test_worse_candidate_uses_uniform(self):
        self.assertTrue(accept_move(-9.0, -10.0, math.exp(-1.0) - 1e-9))
        self.assertFalse(accept_move(-9.0, -10.0, math.exp(-1.0) + 1e-9))

    def test_infeasible_candidate_rejected(self):
        self.assertFalse(accept_move(-9.0, -math.inf, 0.0))


class MhRunTests(SimpleTestCase):
    def setUp(self):
        sigma0 = np.array([[1.0, 0.25, 0.0], [0.25, 1.0, 0.15], [0.0, 0.15, 1.0]])
        self.n = 200
        self.s = data_cov(sigma0, self.n, seed=4)
        self.h = Hyperparams.for_dimension(3, q=0.3)

    def test_matches_enumerated_posterior(self):
        structures = [EdgeSet(3, bits) for bits in itertools.product([False, True], repeat=3)]
        scores = np.array([log_model_prob(z, self.s, self.h, self.n).log_prob for z in structures])
        target = np.exp(scores - scores.max())
        target /= target.sum()

        cfg = ChainConfig(burn_in=1000, iterations=100000, seed=2)
        trace = mh_run(self.s, self.h, cfg, self.n)
        counts = {z.key: 0 for z in structures}
        for sample in trace.samples:
            counts[sample.z.key] += 1
        freq = np.array([counts[z.key] for z in structures]) / cfg.iterations
        self.assertLess(0.5 * np.sum(np.abs(freq - target)), 0.05)

    def test_same_seed_same_trace(self):
        cfg = ChainConfig(burn_in=50, iterations=300, seed=9)
        first = mh_run(self.s, self.h, cfg, self.n)
        second = mh_run(self.s, self.h, cfg, self.n)
        self.assertEqual([(x.z.key, x.log_prob, x.accepted) for x in first.samples],
                         [(x.z.key, x.log_prob, x.accepted) for x in second.samples])
        np.testing.assert_array_equal(first.inclusion_freq, second.inclusion_freq)

    def test_cache_does_not_change_the_trajectory(self):
        cached = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=200, seed=5), self.n)
        uncached = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=200, seed=5, use_cache=False), self.n)
        self.assertEqual([x.z.key for x in cached.samples], [x.z.key for x in uncached.samples])
        self.assertGreater(cached.cache_hits, 0)

    def test_inclusion_frequencies(self):
        trace = mh_run(self.s, self.h, ChainConfig(burn_in=10, iterations=500, seed=3), self.n)
        self.assertEqual(len(trace.samples), 500)
        expected = np.mean([x.z.bits for x in trace.samples], axis=0)
        np.testing.assert_allclose(trace.inclusion_freq, expected)

    def test_both_accepts_and_rejects(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((4, 4))
        s = data_cov(a @ a.T / 4 + np.eye(4), 30, seed=7)
        trace = mh_run(s, Hyperparams.for_dimension(4, q=0.3), ChainConfig(burn_in=0, iterations=1000, seed=1), 30)
        self.assertGreater(trace.acceptance_rate, 0.0)
        self.assertLess(trace.acceptance_rate, 1.0)

    def test_initial_strategies(self):
        for init in ('full', 'random'):
            trace = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=20, seed=1, init=init), self.n)
            self.assertEqual(len(trace.samples), 20)

    def test_warm_start_runs(self):
        cfg = ChainConfig(burn_in=0, iterations=100, seed=8, warm_start=True)
        first = mh_run(self.s, self.h, cfg, self.n)
        second = mh_run(self.s, self.h, cfg, self.n)
        self.assertEqual([x.z.key for x in first.samples], [x.z.key for x in second.samples])

    def test_warm_start_bypasses_the_cache(self):
        cache = ScoreCache()
        cached = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=150, seed=4, warm_start=True),
                        self.n, cache=cache)
        uncached = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=150, seed=4, warm_start=True,
                                                      use_cache=False), self.n)
        self.assertEqual(len(cache), 0)
        self.assertEqual(cached.cache_hits, 0)
        self.assertEqual([(x.z.key, x.log_prob) for x in cached.samples],
                         [(x.z.key, x.log_prob) for x in uncached.samples])

    def test_infeasible_initial_structure_falls_back(self):
        real = approximation.log_model_prob

        def full_is_infeasible(z, *args, **kwargs):
            if z.count() == z.size:
                return ModelScore(z=z, log_prob=-math.inf, sigma_star=None, objective=math.inf,
                                  hessian_logdet=math.nan, feasible=False, reason='test')
            return real(z, *args, **kwargs)

        with mock.patch('sampler.services.log_model_prob', side_effect=full_is_infeasible):
            with self.assertLogs('sampler.services', level='WARNING'):
                trace = mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=10, seed=1, init='full'), self.n)
        self.assertEqual(len(trace.samples), 10)

    def test_infeasible_empty_structure_raises(self):
        infeasible = ModelScore(z=EdgeSet.empty(3), log_prob=-math.inf, sigma_star=None, objective=math.inf,
                                hessian_logdet=math.nan, feasible=False, reason='test')
        with mock.patch('sampler.services.log_model_prob', return_value=infeasible):
            with self.assertRaises(InfeasibleInitialModel):
                mh_run(self.s, self.h, ChainConfig(burn_in=0, iterations=10, seed=1), self.n)


class SelectionTests(SimpleTestCase):
    def test_mpm(self):
        z0, z1 = EdgeSet.empty(2), EdgeSet.full(2)
        self.assertEqual(select_mpm(trace_of(2, [z1], [0.0], freq=[0.7])), z1)
        self.assertEqual(select_mpm(trace_of(2, [z1, z0], [0.0, 0.0], freq=[0.5])), z0)
        self.assertEqual(select_mpm(trace_of(3, [EdgeSet.empty(3)] * 4, [0.0] * 4)), EdgeSet.empty(3))

    def test_map(self):
        a, b = EdgeSet.from_pairs(3, [(0, 1)]), EdgeSet.from_pairs(3, [(1, 2)])
        self.assertEqual(select_map(trace_of(3, [a], [-4.0])), a)
        self.assertEqual(select_map(trace_of(3, [a, b, a], [-10.0, -9.0, -10.0])), b)

    def test_map_ties(self):
        two = EdgeSet.from_pairs(4, [(0, 1), (2, 3)])
        three = EdgeSet.from_pairs(4, [(0, 1), (0, 2), (2, 3)])
        self.assertEqual(select_map(trace_of(4, [three, two], [-5.0, -5.0])), two)
        first, second = EdgeSet.from_pairs(3, [(1, 2)]), EdgeSet.from_pairs(3, [(0, 1)])
        self.assertEqual(select_map(trace_of(3, [first, second], [-5.0, -5.0])), first)

    def test_selection_is_pure(self):
        a, b = EdgeSet.from_pairs(3, [(0, 1)]), EdgeSet.full(3)
        trace = trace_of(3, [a, b, b], [-3.0, -2.0, -2.0])
        self.assertEqual(select_mpm(trace), select_mpm(trace))
        self.assertEqual(select_map(trace), select_map(trace))


class EstimateTests(SimpleTestCase):
    def test_scalar_data(self):
        x = np.array([[1.0], [-2.0], [0.5]])
        cfg = ChainConfig(burn_in=0, iterations=5, seed=0)
        h = Hyperparams.for_dimension(1)
        fit = estimate(x, h, cfg)
        self.assertEqual(fit.z.count(), 0)
        s = float(np.mean(x[:, 0] ** 2))
        self.assertAlmostEqual(fit.sigma_hat.entry(0, 0), gamma_hat(s, h.lam / 3), places=8)

    def test_recovers_moving_average_band(self):
        spec = ModelSpec(3, 10, 500, seed=11)
        truth = gen_model(spec, np.random.default_rng(spec.seed))
        x = sample_mvn(spec.n, truth, np.random.default_rng(12))
        cfg = ChainConfig(burn_in=1000, iterations=4000, seed=1)
        fit = estimate(x, Hyperparams.for_dimension(10), cfg)
        metrics = structure_metrics(fit.sigma_hat, truth)
        self.assertGreaterEqual(metrics.sp, 0.9)
        self.assertGreaterEqual(metrics.se, 0.9)
        check_structure(fit.sigma_hat, fit.z)
        cholesky(fit.sigma_hat)

    def test_identical_seeds_identical_results(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((60, 4))
        cfg = ChainConfig(burn_in=20, iterations=200, seed=4, selector='map')
        h = Hyperparams.for_dimension(4)
        first, second = estimate(x, h, cfg), estimate(x, h, cfg)
        self.assertEqual(first.z, second.z)
        np.testing.assert_array_equal(first.sigma_hat.array, second.sigma_hat.array)
        self.assertEqual(first.as_dict('a.csv'), second.as_dict('a.csv'))
