"""
Test script for the event simulator and the omniscient benchmark

This script tests:
- Policy semantics on small hand-built realizations
- Determinism, conservation of agents and legality of matches
- Common random numbers across coupled policies
- Pool-size reconstruction and Monte Carlo aggregation
- Omniscient loss never exceeding any policy on the same realization

Usage:
    python manage.py test market.tests.test_simulation
"""
import math

import numpy as np
from django.test import SimpleTestCase

from market.exceptions import ConfigInvalid, HorizonNonPositive, TimeOutOfRange
from market.schemas import MATCHING_POLICIES, OMNISCIENT, MarketParams, Policy, Side
from market.services import (
    coupled_run,
    omniscient_loss,
    pool_size_timeseries,
    run_coupled_replications,
    run_replications,
    sample_pool_sizes,
    sample_trajectory,
)
from market.services.omniscient import _merge_covers, omniscient_execution
from market.services.simulation import (
    MATCHED,
    PERISHED,
    REMAINING,
    Realization,
    build_event_log,
    execute_policy,
    loss_report,
    pool_sizes_at,
    sample_realization,
)

UNIT = MarketParams(lambda_a=1, lambda_b=1, p=0.5)
SMALL = MarketParams(lambda_a=20, lambda_b=20, p=0.1)


def overlapping_pair() -> Realization:
    """U present on [0, 2), V on [1, 3), compatible"""
    return Realization.from_intervals(UNIT, 5.0, [(Side.U, 0.0, 2.0), (Side.V, 1.0, 3.0)], edges=[(0, 1)])


class HandBuiltRealizationTests(SimpleTestCase):

    def run_policy(self, policy):
        realization = overlapping_pair()
        execution = execute_policy(realization, policy)
        return build_event_log(realization, policy, execution), execution

    def test_greedy2_matches_on_arrival(self):
        log, execution = self.run_policy(Policy.GREEDY2)
        self.assertEqual(log.matched_pairs(), [(0, 1)])
        self.assertEqual(execution.match_time.tolist(), [1.0, 1.0])
        self.assertEqual(log.edges, frozenset({(0, 1)}))

    def test_patient2_matches_at_first_criticality(self):
        log, execution = self.run_policy(Policy.PATIENT2)
        self.assertEqual(log.matched_pairs(), [(0, 1)])
        self.assertEqual(execution.match_time.tolist(), [2.0, 2.0])

    def test_greedy1_lets_v_match_the_waiting_u(self):
        log, _ = self.run_policy(Policy.GREEDY1)
        self.assertEqual(log.matched_pairs(), [(0, 1)])

    def test_patient1_loses_both(self):
        # U is inactive at its critical time, and by V's critical time U is gone
        log, execution = self.run_policy(Policy.PATIENT1)
        self.assertEqual(log.matched_pairs(), [])
        self.assertEqual(execution.outcome.tolist(), [PERISHED, PERISHED])

        report = loss_report(overlapping_pair(), execution.outcome, Policy.PATIENT1.value)
        self.assertAlmostEqual(report.loss_a, 1 / 5)
        self.assertAlmostEqual(report.loss_b, 1 / 5)

    def test_inactive_never_matches(self):
        log, _ = self.run_policy(Policy.INACTIVE)
        self.assertEqual([a.outcome for a in log.agents], ['perished', 'perished'])

    def test_omniscient_matches_the_overlapping_pair(self):
        execution = omniscient_execution(overlapping_pair())
        self.assertEqual(execution.outcome.tolist(), [MATCHED, MATCHED])
        self.assertEqual(execution.partner.tolist(), [1, 0])

    def test_edges_between_disjoint_intervals_are_dropped(self):
        realization = Realization.from_intervals(
            UNIT, 5.0, [(Side.U, 0.0, 1.0), (Side.V, 2.0, 3.0)], edges=[(0, 1)]
        )
        self.assertEqual(realization.adjacency, [[], []])
        self.assertEqual(omniscient_execution(realization).outcome.tolist(), [PERISHED, PERISHED])

    def test_agents_alive_at_the_horizon_remain(self):
        realization = Realization.from_intervals(UNIT, 5.0, [(Side.U, 4.0, 6.5)])
        execution = execute_policy(realization, Policy.PATIENT2)
        self.assertEqual(execution.outcome.tolist(), [REMAINING])
        report = loss_report(realization, execution.outcome, Policy.PATIENT2.value)
        self.assertEqual((report.remaining_a, report.loss_a), (1, 0.0))

    def test_pool_sizes_follow_presence_intervals(self):
        log, _ = self.run_policy(Policy.INACTIVE)
        self.assertEqual(
            pool_size_timeseries(log, [0.5, 1.5, 2.5, 4.0]),
            [(0.5, 1, 0), (1.5, 1, 1), (2.5, 0, 1), (4.0, 0, 0)],
        )

        log, _ = self.run_policy(Policy.GREEDY2)
        self.assertEqual(pool_size_timeseries(log, [0.5, 1.0]), [(0.5, 1, 0), (1.0, 0, 0)])

    def test_sample_times_outside_the_run_are_rejected(self):
        log, _ = self.run_policy(Policy.GREEDY2)
        with self.assertRaises(TimeOutOfRange):
            pool_size_timeseries(log, [6.0])
        with self.assertRaises(TimeOutOfRange):
            pool_size_timeseries(log, [-0.1])

    def test_empty_realization_flags_zero_denominator(self):
        realization = Realization.from_intervals(UNIT, 1.0, [])
        report = loss_report(realization, execute_policy(realization, Policy.GREEDY2).outcome, 'Greedy2')
        self.assertTrue(report.zero_denominator)
        self.assertEqual((report.loss_a, report.loss_b, report.loss_total), (0.0, 0.0, 0.0))


class TrajectoryTests(SimpleTestCase):

    def test_same_seed_gives_the_same_log(self):
        first = sample_trajectory(SMALL, Policy.PATIENT2, 10.0, seed=11)
        second = sample_trajectory(SMALL, Policy.PATIENT2, 10.0, seed=11)
        self.assertEqual(first, second)
        other = sample_trajectory(SMALL, Policy.PATIENT2, 10.0, seed=12)
        self.assertNotEqual(first[0].agents, other[0].agents)

    def test_every_agent_is_accounted_for(self):
        for policy in Policy:
            log, report = sample_trajectory(SMALL, policy, 10.0, seed=3)
            self.assertEqual(report.arrived_a, report.perished_a + report.matched_a + report.remaining_a)
            self.assertEqual(report.arrived_b, report.perished_b + report.matched_b + report.remaining_b)
            self.assertEqual(report.arrived_a + report.arrived_b, len(log.agents))
            self.assertEqual(report.matched_a, report.matched_b)

    def test_matches_are_legal(self):
        for policy in MATCHING_POLICIES:
            log, _ = sample_trajectory(SMALL, policy, 10.0, seed=5)
            by_id = {agent.id: agent for agent in log.agents}
            for u, v in log.matched_pairs():
                self.assertIn((u, v), log.edges)
                self.assertEqual((by_id[u].side, by_id[v].side), (Side.U, Side.V))
                self.assertEqual(by_id[v].partner_id, u)
                t = by_id[u].match_time
                for agent in (by_id[u], by_id[v]):
                    self.assertLessEqual(agent.arrival_time, t)
                    self.assertLessEqual(t, agent.criticality_time)

    def test_perished_agents_became_critical_inside_the_run(self):
        log, _ = sample_trajectory(SMALL, Policy.GREEDY1, 10.0, seed=8)
        for agent in log.agents:
            if agent.outcome == 'perished':
                self.assertLessEqual(agent.criticality_time, 10.0)
            if agent.outcome == 'remaining':
                self.assertGreater(agent.criticality_time, 10.0)

    def test_greedy2_pool_is_edgeless(self):
        times = list(np.linspace(0.0, 10.0, 41))
        log, _ = sample_trajectory(SMALL, Policy.GREEDY2, 10.0, seed=2, snapshot_times=times)
        self.assertEqual(len(log.pool_snapshots), len(times))
        for t in times:
            present = {a.id for a in log.agents if a.arrival_time <= t < a.departure_time}
            self.assertFalse(any(u in present and v in present for u, v in log.edges))

    def test_inactive_records_no_match(self):
        log, report = sample_trajectory(SMALL, Policy.INACTIVE, 10.0, seed=4)
        self.assertEqual(log.matched_pairs(), [])
        self.assertEqual(report.matched_a, 0)

    def test_invalid_windows_are_rejected(self):
        with self.assertRaises(HorizonNonPositive):
            sample_trajectory(SMALL, Policy.GREEDY2, 0.0, seed=0)
        with self.assertRaises(TimeOutOfRange):
            sample_trajectory(SMALL, Policy.GREEDY2, 5.0, seed=0, burn_in=5.0)

    def test_burn_in_only_shrinks_the_loss_window(self):
        _, full = sample_trajectory(SMALL, Policy.PATIENT2, 10.0, seed=9)
        _, late = sample_trajectory(SMALL, Policy.PATIENT2, 10.0, seed=9, burn_in=4.0)
        self.assertEqual(full.perished_a, late.perished_a)
        self.assertLessEqual(late.loss_a * 20 * 6, full.loss_a * 20 * 10 + 1e-9)


class CouplingTests(SimpleTestCase):

    def test_coupled_policies_share_arrivals_and_lifetimes(self):
        runs = coupled_run(SMALL, 10.0, seed=7, policies=MATCHING_POLICIES)
        reference = [(a.side, a.arrival_time, a.criticality_time) for a in runs[0][0].agents]
        for log, report in runs[1:]:
            self.assertEqual([(a.side, a.arrival_time, a.criticality_time) for a in log.agents], reference)
        self.assertEqual([report.policy for _, report in runs], [p.value for p in MATCHING_POLICIES])

    def test_coupled_run_matches_independent_runs(self):
        runs = coupled_run(SMALL, 10.0, seed=7, policies=[Policy.PATIENT1])
        self.assertEqual(runs[0], sample_trajectory(SMALL, Policy.PATIENT1, 10.0, seed=7))

    def test_coupled_run_needs_a_policy(self):
        with self.assertRaises(ConfigInvalid):
            coupled_run(SMALL, 10.0, seed=7, policies=[])

    def test_omniscient_loses_no_more_than_any_policy(self):
        for seed in range(3):
            realization = sample_realization(SMALL, 10.0, seed)
            omn = loss_report(realization, omniscient_execution(realization).outcome, OMNISCIENT)
            self.assertEqual(omn.matched_a, omn.matched_b)
            for policy in Policy:
                report = loss_report(realization, execute_policy(realization, policy).outcome, policy.value)
                self.assertLessEqual(omn.loss_a, report.loss_a + 1e-12)
                self.assertLessEqual(omn.loss_b, report.loss_b + 1e-12)
                self.assertGreaterEqual(omn.matched_a, report.matched_a)

    def test_omniscient_partners_form_one_matching(self):
        for seed in range(3):
            realization = sample_realization(SMALL, 10.0, seed)
            execution = omniscient_execution(realization)
            matched = np.flatnonzero(execution.outcome == MATCHED)
            for x in matched:
                y = execution.partner[x]
                self.assertEqual(execution.partner[y], x)
                self.assertNotEqual(realization.side[x], realization.side[y])
                self.assertIn(y, realization.adjacency[x])
            self.assertTrue((execution.partner[execution.outcome != MATCHED] == -1).all())

    def test_merged_cover_keeps_both_sides_covered(self):
        # Path 0-10-1-11-2: both U ends are free in one cover, keep the U-side edges
        self.assertEqual(_merge_covers({0: 10, 1: 11}, {10: 1, 11: 2}), [(0, 10), (1, 11)])
        # V agent 11 is reached only by the V-side cover, so that cover wins
        self.assertEqual(_merge_covers({0: 10}, {11: 0}), [(0, 11)])
        self.assertEqual(_merge_covers({}, {}), [])

    def test_pools_never_exceed_the_inactive_pool(self):
        times = list(np.linspace(0.0, 10.0, 51))
        runs = coupled_run(SMALL, 10.0, seed=9, policies=[Policy.INACTIVE, *MATCHING_POLICIES], snapshot_times=times)
        inactive = runs[0][0].pool_snapshots
        for log, _ in runs[1:]:
            for (t, a, b), (_, a_inactive, b_inactive) in zip(log.pool_snapshots, inactive):
                self.assertLessEqual(a, a_inactive, msg=f'{log.policy.value} at t={t}')
                self.assertLessEqual(b, b_inactive, msg=f'{log.policy.value} at t={t}')

    def test_dominance_over_many_realizations(self):
        params = MarketParams(lambda_a=20, lambda_b=20, p=0.2)
        horizon = 50.0
        times = np.linspace(0.0, horizon, 101)
        for seed in range(50):
            realization = sample_realization(params, horizon, seed)
            inactive = pool_sizes_at(realization, execute_policy(realization, Policy.INACTIVE), times)
            omn = loss_report(realization, omniscient_execution(realization).outcome, OMNISCIENT)
            for policy in MATCHING_POLICIES:
                execution = execute_policy(realization, policy)
                sizes = pool_sizes_at(realization, execution, times)
                self.assertTrue((sizes <= inactive).all(), msg=f'{policy.value}, seed {seed}')
                report = loss_report(realization, execution.outcome, policy.value)
                self.assertGreaterEqual(omn.matched_a, report.matched_a, msg=f'{policy.value}, seed {seed}')

    def test_omniscient_respects_the_imbalance_floor(self):
        # d_a = 6, d_b = 3. At most one U agent is matched per V arrival, so
        # perished U >= arrived U - arrived V - U agents still waiting at T.
        params = MarketParams(lambda_a=30, lambda_b=15, p=0.2)
        horizon = 50.0
        report = run_coupled_replications(params, horizon, n_reps=50, seed=0, policies=[])[OMNISCIENT]
        waiting = report.remaining_a / report.n_reps
        floor = (params.lambda_a - params.lambda_b - waiting / horizon) / (params.lambda_a + params.lambda_b)
        self.assertGreater(report.se_total, 0.0)
        self.assertGreaterEqual(report.loss_total, floor - 3 * report.se_total)

        perished = report.loss_total * (params.lambda_a + params.lambda_b) * horizon * report.n_reps
        self.assertGreaterEqual(perished + 1e-6, report.arrived_a - report.arrived_b - report.remaining_a)
        self.assertGreater(report.loss_a, 0.0)

    def test_omniscient_with_burn_in(self):
        realization = sample_realization(SMALL, 10.0, 1)
        omn = loss_report(realization, omniscient_execution(realization, 3.0).outcome, OMNISCIENT, 3.0)
        for policy in MATCHING_POLICIES:
            report = loss_report(realization, execute_policy(realization, policy).outcome, policy.value, 3.0)
            self.assertLessEqual(omn.loss_total, report.loss_total + 1e-12)

    def test_omniscient_loss_entry_point(self):
        report = omniscient_loss(SMALL, 10.0, seed=2)
        self.assertEqual(report.policy, OMNISCIENT)
        self.assertEqual(report.arrived_a, report.perished_a + report.matched_a + report.remaining_a)


class ReplicationTests(SimpleTestCase):

    def test_single_replication_reproduces_the_trajectory(self):
        _, single = sample_trajectory(SMALL, Policy.GREEDY2, 10.0, seed=21)
        report = run_replications(SMALL, Policy.GREEDY2, 10.0, n_reps=1, seed=21)
        self.assertEqual(report.loss_total, single.loss_total)
        self.assertEqual((report.se_a, report.se_b, report.se_total), (0.0, 0.0, 0.0))

    def test_inactive_loss_matches_its_closed_form(self):
        # Without matching, agents arriving at s perish by T with probability 1 - e^{-(T-s)}
        horizon = 10.0
        expected = 1 - (1 - math.exp(-horizon)) / horizon
        report = run_replications(SMALL, Policy.INACTIVE, horizon, n_reps=20, seed=0)
        self.assertEqual(report.n_reps, 20)
        self.assertGreater(report.se_a, 0.0)
        self.assertLess(abs(report.loss_a - expected), 4 * report.se_a)
        self.assertLess(abs(report.loss_b - expected), 4 * report.se_b)

    def test_workers_do_not_change_the_estimate(self):
        serial = run_replications(SMALL, Policy.PATIENT2, 5.0, n_reps=3, seed=4)
        parallel = run_replications(SMALL, Policy.PATIENT2, 5.0, n_reps=3, seed=4, workers=2)
        self.assertEqual(serial, parallel)

    def test_coupled_replications_dominate_with_the_omniscient(self):
        reports = run_coupled_replications(SMALL, 10.0, n_reps=3, seed=6, policies=MATCHING_POLICIES)
        self.assertEqual(list(reports), [p.value for p in MATCHING_POLICIES] + [OMNISCIENT])
        for policy in MATCHING_POLICIES:
            self.assertLessEqual(reports[OMNISCIENT].loss_total, reports[policy.value].loss_total + 1e-12)

    def test_coupled_single_policy_agrees_with_plain_replications(self):
        coupled = run_coupled_replications(
            SMALL, 10.0, n_reps=2, seed=6, policies=[Policy.GREEDY1], include_omniscient=False
        )
        plain = run_replications(SMALL, Policy.GREEDY1, 10.0, n_reps=2, seed=6)
        self.assertEqual(coupled[Policy.GREEDY1.value], plain)

    def test_replication_count_must_be_positive(self):
        with self.assertRaises(ConfigInvalid):
            run_replications(SMALL, Policy.GREEDY2, 10.0, n_reps=0, seed=0)

    def test_sample_pool_sizes_shape(self):
        sizes = sample_pool_sizes(SMALL, Policy.INACTIVE, [0.0, 2.0, 4.0], n_reps=5, seed=1)
        self.assertEqual(sizes.shape, (5, 3, 2))
        np.testing.assert_array_equal(sizes[:, 0, :], 0)
