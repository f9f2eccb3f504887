"""
Test script for the concentration and balance diagnostics

This script tests:
- Tail masses of solved stationary distributions around the characteristic roots
- Cut-flux balance of solved chains, and its failure on perturbed ones
- Simulated losses against stationary losses, for every policy at d = 5

Usage:
    python manage.py test market.tests.test_diagnostics
"""
import numpy as np
from django.test import SimpleTestCase

from market.exceptions import PolicyMismatch
from market.schemas import MarketParams, Policy, PoolDistribution
from market.services import (
    balance_residuals,
    characteristic_roots,
    check_1sided_regions,
    check_greedy2_tails,
    check_patient2_region,
    compare_sim_stationary,
    stationary_distribution,
)

DENSE = MarketParams(lambda_a=60, lambda_b=60, p=0.05)
GREEDY_MARKET = MarketParams(lambda_a=60, lambda_b=60, p=1 / 12)
SMALL = MarketParams(lambda_a=8, lambda_b=8, p=0.25)


class ConcentrationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.greedy2 = stationary_distribution(Policy.GREEDY2, GREEDY_MARKET)
        cls.patient2 = stationary_distribution(Policy.PATIENT2, DENSE)
        cls.greedy1 = stationary_distribution(Policy.GREEDY1, DENSE)
        cls.patient1 = stationary_distribution(Policy.PATIENT1, DENSE)
        cls.roots = characteristic_roots(DENSE)

    def test_greedy2_pools_stay_near_the_roots(self):
        report = check_greedy2_tails(self.greedy2)
        self.assertTrue(report.passed)
        self.assertEqual([e.proposition for e in report.entries], ['greedy2_tail_a', 'greedy2_tail_b'])

    def test_greedy2_tails_shrink_as_sigma_grows(self):
        tails = [check_greedy2_tails(self.greedy2, sigma=s).tail_mass_outside for s in (2, 5, 10)]
        self.assertEqual(tails, sorted(tails, reverse=True))
        self.assertEqual(check_greedy2_tails(self.greedy2, sigma=1000).tail_mass_outside, 0.0)

    def test_patient2_region(self):
        report = check_patient2_region(self.patient2, self.roots)
        self.assertTrue(report.passed)
        by_name = {e.proposition: e for e in report.entries}
        self.assertFalse(by_name['patient2_difference'].skipped)
        wide = check_patient2_region(self.patient2, sigma_sum=(DENSE.lambda_a + DENSE.lambda_b) / 2)
        self.assertEqual({e.proposition: e for e in wide.entries}['patient2_sum'].tail_mass, 0.0)

    def test_difference_check_needs_a_dense_balanced_market(self):
        params = MarketParams(lambda_a=8, lambda_b=8, p=0.25)
        dist = stationary_distribution(Policy.PATIENT2, params)
        by_name = {e.proposition: e for e in check_patient2_region(dist).entries}
        self.assertTrue(by_name['patient2_difference'].skipped)
        self.assertIsNone(by_name['patient2_difference'].passed)

    def test_one_sided_regions(self):
        greedy1 = check_1sided_regions(self.greedy1, self.roots, Policy.GREEDY1)
        self.assertTrue(greedy1.passed)
        self.assertEqual(len(greedy1.entries), 3)

        patient1 = check_1sided_regions(self.patient1, self.roots, Policy.PATIENT1)
        self.assertTrue(patient1.passed)
        self.assertAlmostEqual(self.patient1.mean()[1], DENSE.lambda_b, places=4)

    def test_checks_refuse_other_chains(self):
        with self.assertRaises(PolicyMismatch):
            check_greedy2_tails(self.patient2)
        with self.assertRaises(PolicyMismatch):
            check_1sided_regions(self.greedy2, None, Policy.GREEDY1)
        with self.assertRaises(PolicyMismatch):
            check_1sided_regions(self.greedy1, None, Policy.PATIENT2)


class BalanceTests(SimpleTestCase):

    def test_solved_chains_balance(self):
        tolerance = 1e-8 * (SMALL.lambda_a + SMALL.lambda_b)
        for policy in Policy:
            residuals = balance_residuals(stationary_distribution(policy, SMALL), policy)
            self.assertLess(residuals.worst, tolerance, msg=policy.value)
            if policy == Policy.PATIENT2:
                self.assertIsNotNone(residuals.diagonal)
            else:
                self.assertIsNone(residuals.diagonal)

    def test_empty_pool_only_flows_out(self):
        dist = PoolDistribution.point_mass((10, 10), (0, 0))
        residuals = balance_residuals(dist, Policy.GREEDY2, SMALL)
        self.assertAlmostEqual(residuals.vertical, SMALL.lambda_a)
        self.assertAlmostEqual(residuals.horizontal, SMALL.lambda_b)

    def test_uniform_mass_is_unbalanced(self):
        grid = (38, 38)
        dist = PoolDistribution(grid=grid, mass=np.full((39, 39), 1 / 39 ** 2), leak=0.0)
        residuals = balance_residuals(dist, Policy.GREEDY2, SMALL)
        self.assertGreater(residuals.worst, 1e-3 * (SMALL.lambda_a + SMALL.lambda_b))

    def test_moving_mass_breaks_balance(self):
        solved = stationary_distribution(Policy.PATIENT2, SMALL)
        mass = solved.mass.copy()
        peak = np.unravel_index(np.argmax(mass), mass.shape)
        mass[peak] -= 0.01
        mass[peak[0] + 1, peak[1]] += 0.01
        perturbed = PoolDistribution(grid=solved.grid, mass=mass, leak=solved.leak, params=SMALL)
        residuals = balance_residuals(perturbed, Policy.PATIENT2)
        self.assertGreater(residuals.worst, 1e-8 * (SMALL.lambda_a + SMALL.lambda_b))


class SimulationConsistencyTests(SimpleTestCase):

    def test_inactive_mean_pool(self):
        params = MarketParams(lambda_a=10, lambda_b=10, p=0.1)
        consistency = compare_sim_stationary(params, Policy.INACTIVE, 3.0, 0.0, n_reps=200, seed=0)
        self.assertEqual(consistency.reference_kind, 'inactive_mean_pool')
        self.assertAlmostEqual(consistency.reference, 10 * (1 - np.exp(-3.0)))
        self.assertTrue(consistency.within_tolerance)

    def test_greedy2_simulation_agrees_with_the_chain(self):
        params = MarketParams(lambda_a=10, lambda_b=10, p=0.2)
        consistency = compare_sim_stationary(params, Policy.GREEDY2, 30.0, 5.0, n_reps=40, seed=3)
        self.assertEqual(consistency.reference_kind, 'stationary_loss')
        self.assertGreater(consistency.simulated_se, 0.0)
        self.assertTrue(consistency.within_tolerance, msg=consistency)

    def test_every_policy_agrees_with_its_chain_in_a_dense_market(self):
        params = MarketParams(lambda_a=30, lambda_b=30, p=1 / 6)
        for policy in (Policy.GREEDY2, Policy.PATIENT2, Policy.GREEDY1, Policy.PATIENT1):
            consistency = compare_sim_stationary(params, policy, 100.0, 20.0, n_reps=60, seed=0)
            self.assertGreater(consistency.simulated_se, 0.0)
            self.assertTrue(consistency.within_tolerance, msg=consistency)
