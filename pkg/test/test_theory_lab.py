#!/usr/bin/env python3
# test_theory_lab.py - Test the error-decomposition experiments

import math
import os
import sys
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np

# Add the parent directory to sys.path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from socketlsh.attention import population_estimate
from socketlsh.errors import ParameterError
from socketlsh.linalg import fit_loglog_slope, orthonormal_rows, spectral_norm
from socketlsh.lsh_core import oracle_collision_probability
from socketlsh.synthetic import InstanceConfig
from socketlsh.theory_lab import (
    SLOPE_WINDOW,
    SweepResult,
    VarianceCheck,
    _required_decay,
    bias_bound,
    correlation_experiment,
    sweep_L,
    sweep_M,
    sweep_tau,
    table_precondition,
    triangle_report,
    variance_extremality,
)


class TestLinalg(unittest.TestCase):

    def test_spectral_norm_matches_svd(self):
        rng = np.random.default_rng(0)
        for shape in ((200, 32), (32, 200), (50, 50)):
            A = rng.standard_normal(shape)
            expected = np.linalg.svd(A, compute_uv=False)[0]
            self.assertAlmostEqual(spectral_norm(A) / expected, 1.0, delta=1e-6)

    def test_spectral_norm_edge_cases(self):
        self.assertEqual(spectral_norm(np.zeros((0, 3))), 0.0)
        self.assertAlmostEqual(spectral_norm(np.diag([3.0, 1.0])), 3.0, places=6)
        with self.assertRaises(ParameterError):
            spectral_norm(np.ones(3))

    def test_orthonormal_rows(self):
        rows = np.random.default_rng(1).standard_normal((8, 128))
        Q = orthonormal_rows(rows)
        np.testing.assert_allclose(Q @ Q.T, np.eye(8), atol=1e-12)
        with self.assertRaises(ParameterError):
            orthonormal_rows(np.ones((3, 2)))

    def test_slope_fit_recovers_rate(self):
        rng = np.random.default_rng(2)
        xs = [8, 16, 32, 64, 128]
        errors = [list(x ** -0.5 * (1.0 + 0.05 * rng.standard_normal(20))) for x in xs]

        fit = fit_loglog_slope(xs, errors, seed=3)

        self.assertAlmostEqual(fit.slope, -0.5, delta=0.05)
        self.assertLessEqual(fit.ci_low, fit.slope)
        self.assertGreaterEqual(fit.ci_high, fit.slope)
        self.assertTrue(fit.intersects(*SLOPE_WINDOW))

    def test_slope_fit_errors(self):
        with self.assertRaises(ParameterError):
            fit_loglog_slope([1, 2], [[1.0]])
        with self.assertRaises(ParameterError):
            fit_loglog_slope([1], [[1.0]])


class TestBounds(unittest.TestCase):

    def test_table_precondition(self):
        self.assertAlmostEqual(table_precondition(4, 2.0, 0.1), 2 * 16 * math.log(80) / 4)

    def test_bias_bound(self):
        self.assertAlmostEqual(bias_bound(4, 2.0, 1.0, 0.1, 3.0),
                               2 * 4 * (1.0 + 2.0 / 2.0) * 0.1 * 3.0)


class TestInstanceConfig(unittest.TestCase):

    def test_build_is_reproducible(self):
        first_q, first_cache = InstanceConfig(N=32, d=8, seed=4).build()
        second_q, second_cache = InstanceConfig(N=32, d=8, seed=4).build()

        np.testing.assert_array_equal(first_q, second_q)
        np.testing.assert_array_equal(first_cache.keys, second_cache.keys)
        self.assertEqual(first_q.shape, (8,))
        self.assertEqual(first_cache.N, 32)

    def test_rejects_empty_instance(self):
        with self.assertRaises(ParameterError):
            InstanceConfig(N=0, d=8)


class TestSweepL(unittest.TestCase):

    def test_small_sweep_records(self):
        instance = InstanceConfig(N=128, d=16, seed=1)
        kwargs = dict(L_values=[4, 8, 16, 32], replicas=3, P=4, tau=0.5, mc_tables=500, seed=7)

        outcome = sweep_L(instance, **kwargs)
        again = sweep_L(instance, threads=3, **kwargs)

        self.assertEqual(len(outcome.results), 12)
        self.assertEqual([r.error_l2 for r in outcome.results],
                         [r.error_l2 for r in again.results])
        for r in outcome.results:
            self.assertGreaterEqual(r.error_l2, 0.0)
            self.assertGreaterEqual(r.realized_B, math.ceil(128 / 16))
            self.assertEqual(r.target_kind, "y_tau")
        self.assertTrue(outcome.checks["replicas_vary"])

    def test_rate(self):
        instance = InstanceConfig(N=256, d=32, seed=3)
        outcome = sweep_L(instance, [8, 16, 32, 64, 128, 256], replicas=12, P=6,
                          tau=0.5, mc_tables=20000, seed=11)
        self.assertTrue(outcome.checks["slope_in_window"], outcome.summary["slope_ci"])
        self.assertTrue(outcome.checks["z_tilde_concentration"])

    def test_grid_validation(self):
        instance = InstanceConfig(N=16, d=4)
        with self.assertRaises(ParameterError):
            sweep_L(instance, [8, 16, 32], replicas=2, mc_tables=100)
        with self.assertRaises(ParameterError):
            sweep_L(instance, [8, 16, 16, 32], replicas=2, mc_tables=100)
        with self.assertRaises(ParameterError):
            sweep_L(instance, [8, 16, 32, 64], replicas=1, mc_tables=100)


class TestSweepM(unittest.TestCase):

    def test_rate_tail_bound_and_decay(self):
        instance = InstanceConfig(N=256, d=32, seed=4)
        outcome = sweep_M(instance, [8, 64, 512, 4096], replicas=30, P=6, L=30, seed=5)
        means = outcome.summary["mean_errors"]

        self.assertTrue(outcome.checks["slope_in_window"], outcome.summary["slope_ci"])
        self.assertTrue(outcome.checks["tail_bound_rate"])
        self.assertTrue(all(r.target_kind == "y_tau_L" for r in outcome.results))
        # mean error at M=4096 at most a tenth of the M=8 error
        self.assertEqual(outcome.summary["required_decay"], 10.0)
        self.assertLessEqual(means[4096], means[8] / 10.0)
        self.assertTrue(outcome.checks["error_decays"])

    def test_required_decay_scales_with_span(self):
        self.assertEqual(_required_decay([8, 64, 512, 4096]), 10.0)
        self.assertEqual(_required_decay([16, 64, 1024, 16384]), 10.0)
        self.assertAlmostEqual(_required_decay([8, 32, 128, 512]), 10.0 * math.sqrt(64 / 512))

    def test_flat_errors_fail_decay(self):
        instance = InstanceConfig(N=64, d=8, seed=2)
        flat = np.full(8, 0.5)
        with patch("socketlsh.theory_lab.sample_estimator",
                   side_effect=lambda scores, cache, sampler: flat):
            outcome = sweep_M(instance, [8, 64, 512, 4096], replicas=2, P=3, L=4, seed=1)
        self.assertFalse(outcome.checks["error_decays"])


class TestSweepTau(unittest.TestCase):

    def test_bias_bound_and_limits(self):
        instance = InstanceConfig(N=128, d=16, seed=6)
        outcome = sweep_tau(instance, [0.01, 0.1, 1.0, 10.0, 100.0], mc_tables=2000, P=4, seed=2)

        self.assertTrue(outcome.checks["bias_bound_holds"])
        self.assertTrue(outcome.checks["epsilon_monotone_in_tau"])
        self.assertTrue(outcome.checks["uniform_limit_at_hot_tau"])
        self.assertEqual(outcome.summary["uniform_limit"], 1.0 - 1.0 / 16)
        hottest = outcome.results[-1]
        self.assertAlmostEqual(hottest.extra["epsilon_tau"], 1.0 - 1.0 / 16, delta=1e-2)
        self.assertLess(outcome.results[0].extra["epsilon_tau"], 0.05)

    def test_uniform_limit_at_eight_planes(self):
        instance = InstanceConfig(N=64, d=128, seed=3)
        outcome = sweep_tau(instance, [0.5, 5.0, 100.0], mc_tables=300, P=8, seed=4)
        self.assertTrue(outcome.checks["uniform_limit_at_hot_tau"])

    def test_uniform_limit_only_checked_when_hot(self):
        outcome = sweep_tau(InstanceConfig(N=32, d=8, seed=1), [0.01, 0.1, 1.0],
                            mc_tables=200, P=3, seed=1)
        self.assertNotIn("uniform_limit_at_hot_tau", outcome.checks)

    def test_uniform_limit_check_can_fail(self):
        instance = InstanceConfig(N=32, d=8, seed=1)

        def peaked(*args, **kwargs):
            return replace(population_estimate(*args, **kwargs), epsilon_tau=0.5)

        with patch("socketlsh.theory_lab.population_estimate", side_effect=peaked):
            outcome = sweep_tau(instance, [0.5, 5.0, 100.0], mc_tables=200, P=3, seed=1)
        self.assertFalse(outcome.checks["uniform_limit_at_hot_tau"])

    def test_bias_bound_on_fifty_instances(self):
        violations = []
        for seed in range(50):
            outcome = sweep_tau(InstanceConfig(N=64, d=16, seed=seed), [0.1, 0.5, 2.0, 10.0],
                                mc_tables=200, P=4, seed=seed)
            violations += [(seed, r.value) for r in outcome.results
                           if r.extra["bound_holds"] != 1.0]
        self.assertEqual(violations, [])

    def test_requires_two_decades(self):
        with self.assertRaises(ParameterError):
            sweep_tau(InstanceConfig(N=16, d=4), [0.5, 1.0, 10.0], mc_tables=100)


class TestCorrelation(unittest.TestCase):

    def test_closed_forms(self):
        # three seeds pooled into one z-score per quantity
        runs = [correlation_experiment(P=8, d=128, mc_pairs=100000, seed=seed)
                for seed in (1, 2, 3)]

        def pooled(deviations, errors):
            return sum(deviations) / math.sqrt(sum(e * e for e in errors))

        z_hard = pooled([r.gamma_hard - r.gamma_hard_predicted for r in runs],
                        [r.se_hard for r in runs])
        z_soft = pooled([r.gamma_soft - r.gamma_soft_predicted for r in runs],
                        [r.se_soft for r in runs])
        z_order = pooled([r.gamma_hard - r.gamma_soft for r in runs],
                         [r.se_difference for r in runs])

        self.assertLessEqual(abs(z_hard), 3.0)
        self.assertLessEqual(abs(z_soft), 3.0)
        self.assertLessEqual(z_order, 3.0)
        for run in runs:
            self.assertTrue(run.checks()["gamma_within_unit_range"])


    def test_raw_planes_report_only(self):
        experiment = correlation_experiment(P=4, d=16, mc_pairs=2000, seed=2, orthonormal=False)
        self.assertFalse(experiment.orthonormal)
        self.assertEqual(experiment.mc_pairs, 2000)

    def test_more_planes_than_dimensions(self):
        with self.assertRaises(ParameterError):
            correlation_experiment(P=9, d=8, mc_pairs=1000)


class TestVarianceExtremality(unittest.TestCase):

    def test_bernoulli_bounds(self):
        # 20 pairs over 1e4 fresh tables each
        rng = np.random.default_rng(8)
        hard_failures = 0
        deviations, errors = [], []
        for pair in range(20):
            q, k = rng.standard_normal((2, 16))
            check = variance_extremality(q, 0.6 * q + 0.4 * k, P=4, tau=0.5, tables=10000,
                                         seed=pair)
            result = check.checks()

            self.assertTrue(result["soft_variance_below_bernoulli"], check)
            self.assertTrue(result["soft_variance_strictly_below_bernoulli"], check)
            self.assertEqual(check.hard_expected,
                             oracle_collision_probability(q, 0.6 * q + 0.4 * k, 4))
            hard_failures += not result["hard_variance_matches_bernoulli"]
            deviations.append(check.hard_variance - check.hard_bound)
            errors.append(check.hard_variance_se)

        # 20 pairs at a 0.27% per-pair rate; the pooled deviation stays within 3 SE
        self.assertLessEqual(hard_failures, 1)
        self.assertLessEqual(abs(sum(deviations)) / math.sqrt(sum(e * e for e in errors)), 3.0)

    def test_hard_variance_is_unbiased_estimate(self):
        q, k = np.random.default_rng(3).standard_normal((2, 8))
        check = variance_extremality(q, k, P=2, tau=0.5, tables=500, seed=3)
        mean = check.hard_mean
        # ddof=1 of a 0/1 sample is n/(n-1) times the plug-in variance
        self.assertAlmostEqual(check.hard_variance, mean * (1.0 - mean) * 500 / 499, places=12)

    def _check(self, **overrides):
        fields = dict(soft_mean=0.3, soft_variance=0.1, soft_variance_se=0.001,
                      hard_mean=0.3, hard_variance=0.21, hard_expected=0.3, tables=10000)
        fields.update(overrides)
        return VarianceCheck(**fields)

    def test_wrong_hard_collision_rate_fails(self):
        # sample variance of a Bernoulli(0.1) indicator against the p = 0.3 closed form
        result = self._check(hard_mean=0.1, hard_variance=0.09).checks()
        self.assertFalse(result["hard_variance_matches_bernoulli"])
        self.assertTrue(self._check().checks()["hard_variance_matches_bernoulli"])

    def test_half_probability_keeps_a_tolerance(self):
        check = self._check(hard_mean=0.5, hard_expected=0.5, hard_variance=0.25 - 1e-5)
        self.assertEqual(check.hard_variance_se, 0.0)
        self.assertTrue(check.checks()["hard_variance_matches_bernoulli"])

    def test_bernoulli_soft_scores_fail_strict_bound(self):
        check = self._check(soft_variance_se=0.0)
        result = replace(check, soft_variance=check.soft_bound).checks()
        self.assertTrue(result["soft_variance_below_bernoulli"])
        self.assertFalse(result["soft_variance_strictly_below_bernoulli"])


class TestTriangleReport(unittest.TestCase):

    def test_total_bounded_by_terms(self):
        report = triangle_report(InstanceConfig(N=128, d=16, seed=9), L=20, M=32, tau=0.5,
                                 P=4, mc_tables=500, seed=3)
        self.assertTrue(report.holds)
        for term in (report.total, report.sampling_term, report.table_term, report.bias_term):
            self.assertGreaterEqual(term, 0.0)

    def test_many_samples_make_sampling_term_negligible(self):
        instance = InstanceConfig(N=128, d=16, seed=9)
        few = triangle_report(instance, L=20, M=16, tau=0.5, P=4, mc_tables=500, seed=3)
        many = triangle_report(instance, L=20, M=100000, tau=0.5, P=4, mc_tables=500, seed=3)

        self.assertTrue(many.holds)
        self.assertLess(many.sampling_term, few.sampling_term / 20)
        self.assertLess(many.sampling_term, 0.2 * (many.table_term + many.bias_term))

    def test_cold_temperature_shrinks_bias_term(self):
        instance = InstanceConfig(N=128, d=16, seed=10)
        cold = triangle_report(instance, L=20, M=64, tau=0.01, P=4, mc_tables=4000, seed=4)
        hot = triangle_report(instance, L=20, M=64, tau=10.0, P=4, mc_tables=4000, seed=4)

        self.assertTrue(cold.holds and hot.holds)
        self.assertLess(cold.epsilon_tau, hot.epsilon_tau)
        self.assertLess(cold.bias_term, 0.5 * hot.bias_term)


class TestSweepResult(unittest.TestCase):

    def test_row_flattens_extra(self):
        result = SweepResult(swept_param="L", value=8, replica=0, error_l2=0.1,
                             target_kind="y_tau", v_spectral_norm=2.0, realized_Z=1.0,
                             realized_Z_tau=1.1, realized_B=5, seed=1, wall_time=0.0,
                             extra={"z_gap": 0.01})
        row = result.as_row()
        self.assertEqual(row["z_gap"], 0.01)
        self.assertNotIn("extra", row)


if __name__ == '__main__':
    unittest.main()
