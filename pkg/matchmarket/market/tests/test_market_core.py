"""
Test script for the market core

This script tests:
- Parameter validation and its error types
- Density arithmetic and the (d_a, d_b, p) parameterization
- Policy lookup and the immutability of value types

Usage:
    python manage.py test market.tests.test_market_core
"""
import math

import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from market.exceptions import MarketError, NonPositiveRate, ProbabilityOutOfRange
from market.schemas import MarketParams, Policy, PoolDistribution, Side
from market.services import densities, params_from_densities, validate_params
from market.services.market_core import survival


class ValidateParamsTests(SimpleTestCase):

    def test_accepts_a_regular_market(self):
        params = validate_params(100, 80, 0.05)
        self.assertEqual(params.lambda_a, 100)
        self.assertEqual(params.lambda_b, 80)

    def test_rejects_non_positive_rates(self):
        with self.assertRaises(NonPositiveRate):
            validate_params(0, 1, 0.5)
        with self.assertRaises(NonPositiveRate):
            validate_params(1, -3, 0.5)
        with self.assertRaises(NonPositiveRate):
            validate_params(float('nan'), 1, 0.5)

    def test_rejects_probability_outside_open_interval(self):
        for p in (0.0, 1.0, 1.5, -0.1):
            with self.assertRaises(ProbabilityOutOfRange):
                validate_params(1, 1, p)

    def test_errors_are_value_errors(self):
        with self.assertRaises(ValueError):
            validate_params(1, 1, 2.0)
        self.assertTrue(issubclass(ProbabilityOutOfRange, MarketError))


class DensityTests(SimpleTestCase):

    def test_balanced_market(self):
        d = densities(MarketParams(lambda_a=100, lambda_b=100, p=0.05))
        self.assertAlmostEqual(d.d_a, 5.0)
        self.assertAlmostEqual(d.d_b, 5.0)
        self.assertEqual(d.delta, 0.0)

    def test_imbalance(self):
        d = densities(params_from_densities(10, 5, 0.05))
        self.assertAlmostEqual(d.delta, 1 / 3)

    def test_scaling_rates_up_and_p_down_keeps_densities(self):
        base = densities(MarketParams(lambda_a=40, lambda_b=25, p=0.1))
        for c in (2, 10, 1000):
            scaled = densities(MarketParams(lambda_a=40 * c, lambda_b=25 * c, p=0.1 / c))
            self.assertAlmostEqual(scaled.d_a, base.d_a, places=9)
            self.assertAlmostEqual(scaled.d_b, base.d_b, places=9)
            self.assertAlmostEqual(scaled.delta, base.delta, places=9)

    def test_params_from_densities(self):
        params = params_from_densities(5, 3, 0.05)
        self.assertAlmostEqual(params.lambda_a, 100)
        self.assertAlmostEqual(params.lambda_b, 60)
        with self.assertRaises(ProbabilityOutOfRange):
            params_from_densities(5, 3, 1.0)

    def test_survival_is_stable_for_large_exponents(self):
        self.assertAlmostEqual(survival(0.1, 2), 0.81)
        self.assertEqual(survival(0.3, 0), 1.0)
        tail = survival(0.5, 5000)
        self.assertTrue(np.isfinite(tail))
        self.assertGreaterEqual(tail, 0.0)
        np.testing.assert_allclose(survival(0.2, np.array([1, 2])), [0.8, 0.64])


class SchemaTests(SimpleTestCase):

    def test_policy_lookup_is_case_insensitive(self):
        self.assertEqual(Policy.from_name('greedy2'), Policy.GREEDY2)
        self.assertEqual(Policy.from_name(' PATIENT1 '), Policy.PATIENT1)
        with self.assertRaises(ValueError):
            Policy.from_name('greedy3')

    def test_one_sided_policies_keep_u_inactive(self):
        self.assertFalse(Policy.GREEDY1.is_greedy_on(Side.U))
        self.assertTrue(Policy.GREEDY1.is_greedy_on(Side.V))
        self.assertFalse(Policy.PATIENT1.is_patient_on(Side.U))
        self.assertTrue(Policy.PATIENT1.is_patient_on(Side.V))
        self.assertFalse(Policy.INACTIVE.is_greedy_on(Side.V))
        self.assertFalse(Policy.INACTIVE.is_patient_on(Side.U))

    def test_params_are_frozen(self):
        params = MarketParams(lambda_a=1, lambda_b=1, p=0.5)
        with self.assertRaises(ValidationError):
            params.p = 0.2
        self.assertEqual(params.swapped(), MarketParams(lambda_a=1, lambda_b=1, p=0.5))

    def test_distribution_csv_keeps_mass_and_leak(self):
        mass = np.zeros((3, 2))
        mass[0, 0], mass[2, 1] = 0.75, 0.25
        dist = PoolDistribution(grid=(2, 1), mass=mass, leak=1e-9)
        text = dist.to_csv()
        self.assertTrue(text.startswith('i,j,prob\n'))
        self.assertIn('# leak=', text.splitlines()[-1])

        parsed = PoolDistribution.from_csv('# config: {}\n' + text, grid=(2, 1))
        np.testing.assert_array_equal(parsed.mass, mass)
        self.assertEqual(parsed.leak, 1e-9)
        self.assertTrue(math.isclose(parsed.mass.sum(), 1.0))
