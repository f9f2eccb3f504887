"""
Numerical evidence for the concentration and balance properties of the
pool-size chains: tail masses of solved stationary distributions, cut-flux
residuals, and simulation against stationary cross-checks.
"""
import logging
import math
from typing import Optional

import numpy as np
from django.conf import settings

from ..exceptions import PolicyMismatch
from ..schemas import (
    BalanceResiduals,
    ConcentrationReport,
    MarketParams,
    Policy,
    PoolDistribution,
    PropositionCheck,
    RootSet,
    SimulationConsistency,
)
from .bounds import characteristic_roots, default_sigma
from .ctmc import grid_states, move_rates, stationary_distribution, stationary_loss
from .simulation import run_replications, sample_pool_sizes

logger = logging.getLogger(__name__)

CONSISTENCY_Z = 3.0


def _expect(dist: PoolDistribution, *policies: Policy) -> None:
    if dist.policy is not None and dist.policy not in policies:
        raise PolicyMismatch(
            f"distribution solved for {dist.policy.value}, expected {'/'.join(p.value for p in policies)}"
        )


def _params(dist: PoolDistribution, params: Optional[MarketParams]) -> MarketParams:
    params = params or dist.params
    if params is None:
        raise PolicyMismatch('distribution carries no market; pass params explicitly')
    return params


def _coordinates(dist: PoolDistribution) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(dist.grid[0] + 1), np.arange(dist.grid[1] + 1), indexing='ij')


def _mass(dist: PoolDistribution, event: np.ndarray) -> float:
    return float(min(max(dist.mass[event].sum(), 0.0), 1.0))


def _check(name: str, region: str, tail: float, threshold: float) -> PropositionCheck:
    return PropositionCheck(proposition=name, region=region, tail_mass=tail, threshold=threshold,
                            passed=tail < threshold)


def _report(policy, params, sigma_a, sigma_b, region, outside, entries) -> ConcentrationReport:
    report = ConcentrationReport(
        policy=policy, params=params, sigma_a=sigma_a, sigma_b=sigma_b,
        region=region, tail_mass_outside=outside, entries=entries,
    )
    for entry in entries:
        if entry.passed is False:
            logger.warning('%s: %s tail %.4g >= %.3g', policy.value, entry.proposition, entry.tail_mass, entry.threshold)
    return report


def check_greedy2_tails(
    dist: PoolDistribution,
    roots: Optional[RootSet] = None,
    sigma: Optional[float] = None,
    threshold: Optional[float] = None,
    params: Optional[MarketParams] = None,
) -> ConcentrationReport:
    """
    Pr[A >= k2 + sigma + 1] and Pr[B >= l2 + sigma + 1] under a Greedy2
    stationary distribution. Without `sigma` each side uses sqrt(lambda log lambda).
    """
    _expect(dist, Policy.GREEDY2)
    params = _params(dist, params)
    threshold = settings.MATCHMARKET_TAIL_THRESHOLD if threshold is None else threshold
    roots = roots or characteristic_roots(params)
    sigma_a = default_sigma(params.lambda_a) if sigma is None else sigma
    sigma_b = default_sigma(params.lambda_b) if sigma is None else sigma

    a, b = _coordinates(dist)
    edge_a = roots.k2 + sigma_a + 1
    edge_b = roots.l2 + sigma_b + 1
    entries = [
        _check('greedy2_tail_a', f'A >= {edge_a:.4g}', _mass(dist, a >= edge_a), threshold),
        _check('greedy2_tail_b', f'B >= {edge_b:.4g}', _mass(dist, b >= edge_b), threshold),
    ]
    region = f'[0, {edge_a:.4g}) x [0, {edge_b:.4g})'
    outside = _mass(dist, (a >= edge_a) | (b >= edge_b))
    return _report(Policy.GREEDY2, params, sigma_a, sigma_b, region, outside, entries)


def check_patient2_region(
    dist: PoolDistribution,
    roots: Optional[RootSet] = None,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
    sigma_sum: Optional[float] = None,
    sigma_d: Optional[float] = None,
    threshold: Optional[float] = None,
    params: Optional[MarketParams] = None,
) -> ConcentrationReport:
    """
    Patient2 concentration: the mass outside
    S = [k2_lower - sigma_a, lambda_a + sigma_a] x [l2_lower - sigma_b, lambda_b + sigma_b],
    the low tail of A + B, and (only for d_a = d_b >= 3, p < 0.1) the tail
    of A - B. Shifted roots are taken from `roots` and must have been solved
    with the same sigmas.
    """
    _expect(dist, Policy.PATIENT2)
    params = _params(dist, params)
    threshold = settings.MATCHMARKET_TAIL_THRESHOLD if threshold is None else threshold
    la, lb = params.lambda_a, params.lambda_b
    if roots is None:
        roots = characteristic_roots(params, sigma_a, sigma_b)
    sigma_a = roots.sigma_a if sigma_a is None else sigma_a
    sigma_b = roots.sigma_b if sigma_b is None else sigma_b
    sigma_sum = default_sigma(la + lb) if sigma_sum is None else sigma_sum
    sigma_d = max(1.0, math.log(la)) if sigma_d is None else sigma_d

    a, b = _coordinates(dist)
    a_range = (roots.k2_lower - sigma_a, la + sigma_a)
    b_range = (roots.l2_lower - sigma_b, lb + sigma_b)
    inside = (a >= a_range[0]) & (a <= a_range[1]) & (b >= b_range[0]) & (b <= b_range[1])
    region = f'[{a_range[0]:.4g}, {a_range[1]:.4g}] x [{b_range[0]:.4g}, {b_range[1]:.4g}]'
    outside = _mass(dist, ~inside)

    sum_edge = (la + lb) / 2 - 2 - sigma_sum - 1
    entries = [
        _check('patient2_region', region, outside, threshold),
        _check('patient2_sum', f'A + B <= {sum_edge:.4g}', _mass(dist, a + b <= sum_edge), threshold),
    ]

    diff_edge = (la + sigma_a) / 2 + sigma_d
    diff_region = f'A - B >= {diff_edge:.4g}'
    balanced = math.isclose(params.d_a, params.d_b, rel_tol=1e-12)
    if balanced and params.d_a >= 3 and params.p < 0.1:
        entries.append(_check('patient2_difference', diff_region, _mass(dist, a - b >= diff_edge), threshold))
    else:
        entries.append(PropositionCheck(
            proposition='patient2_difference', region=diff_region, threshold=threshold,
            skipped=True, note='needs d_a = d_b >= 3 and p < 0.1',
        ))
    return _report(Policy.PATIENT2, params, sigma_a, sigma_b, region, outside, entries)


def check_1sided_regions(
    dist: PoolDistribution,
    roots: Optional[RootSet],
    policy: Policy,
    sigma_a: Optional[float] = None,
    sigma_b: Optional[float] = None,
    threshold: Optional[float] = None,
    params: Optional[MarketParams] = None,
) -> ConcentrationReport:
    """
    Greedy1: Pr[A >= k1 + sigma_a + 1], Pr[A <= k1 - sigma_a - 1] and
    Pr[B >= l1 + sigma_b + 1]. Patient1: the mass outside
    S = [k1_lower - sigma_a, k1_upper + sigma_a] x [lambda_b - sigma_b, lambda_b + sigma_b],
    with lambda_a standing in for k1_upper when it is undefined.
    """
    if policy not in (Policy.GREEDY1, Policy.PATIENT1):
        raise PolicyMismatch(f'1-sided regions apply to Greedy1/Patient1, got {policy.value}')
    _expect(dist, policy)
    params = _params(dist, params)
    threshold = settings.MATCHMARKET_TAIL_THRESHOLD if threshold is None else threshold
    if roots is None:
        roots = characteristic_roots(params, sigma_a, sigma_b)
    sigma_a = roots.sigma_a if sigma_a is None else sigma_a
    sigma_b = roots.sigma_b if sigma_b is None else sigma_b
    la, lb = params.lambda_a, params.lambda_b

    a, b = _coordinates(dist)
    if policy == Policy.GREEDY1:
        high_a, low_a, high_b = roots.k1 + sigma_a + 1, roots.k1 - sigma_a - 1, roots.l1 + sigma_b + 1
        entries = [
            _check('greedy1_tail_a_high', f'A >= {high_a:.4g}', _mass(dist, a >= high_a), threshold),
            _check('greedy1_tail_a_low', f'A <= {low_a:.4g}', _mass(dist, a <= low_a), threshold),
            _check('greedy1_tail_b_high', f'B >= {high_b:.4g}', _mass(dist, b >= high_b), threshold),
        ]
        region = f'({low_a:.4g}, {high_a:.4g}) x [0, {high_b:.4g})'
        outside = _mass(dist, (a >= high_a) | (a <= low_a) | (b >= high_b))
        return _report(policy, params, sigma_a, sigma_b, region, outside, entries)

    k1_upper = roots.k1_upper if roots.k1_upper is not None else la
    a_range = (roots.k1_lower - sigma_a, k1_upper + sigma_a)
    b_range = (lb - sigma_b, lb + sigma_b)
    inside = (a >= a_range[0]) & (a <= a_range[1]) & (b >= b_range[0]) & (b <= b_range[1])
    region = f'[{a_range[0]:.4g}, {a_range[1]:.4g}] x [{b_range[0]:.4g}, {b_range[1]:.4g}]'
    outside = _mass(dist, ~inside)
    check = _check('patient1_region', region, outside, threshold)
    if roots.k1_upper is None:
        check = check.model_copy(update={'note': 'k1_upper undefined; lambda_a used'})
    return _report(policy, params, sigma_a, sigma_b, region, outside, [check])


def balance_residuals(
    dist: PoolDistribution,
    policy: Policy,
    params: Optional[MarketParams] = None,
) -> BalanceResiduals:
    """
    Largest |flux out - flux in| across the vertical cuts {i <= k}, the
    horizontal cuts {j <= h} and, for Patient2, the diagonal cuts {i + j <= h}.
    Transitions leaving the grid are censored as in the solved chain.
    """
    params = _params(dist, params)
    a_max, b_max = dist.grid
    k, j = grid_states(dist.grid)
    weight = dist.mass.ravel()

    vertical = np.zeros(a_max)
    horizontal = np.zeros(b_max)
    diagonal = np.zeros(a_max + b_max)
    for (dk, dj), rate in move_rates(policy, params, k, j).items():
        tk, tj = k + dk, j + dj
        keep = (tk >= 0) & (tk <= a_max) & (tj >= 0) & (tj <= b_max)
        flux = weight[keep] * rate[keep]
        sk, sj = k[keep], j[keep]
        # Outward crossings add, inward crossings subtract
        if dk == 1:
            vertical += np.bincount(sk, flux, a_max + 1)[:a_max]
        elif dk == -1:
            vertical -= np.bincount(sk - 1, flux, a_max)
        if dj == 1:
            horizontal += np.bincount(sj, flux, b_max + 1)[:b_max]
        elif dj == -1:
            horizontal -= np.bincount(sj - 1, flux, b_max)
        level = sk + sj
        step = dk + dj
        if step == 1:
            diagonal += np.bincount(level, flux, a_max + b_max + 1)[:a_max + b_max]
        for crossed in range(1, -step + 1):
            diagonal -= np.bincount(level - crossed, flux, a_max + b_max)

    return BalanceResiduals(
        vertical=float(np.abs(vertical).max()) if a_max else 0.0,
        horizontal=float(np.abs(horizontal).max()) if b_max else 0.0,
        diagonal=float(np.abs(diagonal).max()) if policy == Policy.PATIENT2 else None,
    )


def compare_sim_stationary(
    params: MarketParams,
    policy: Policy,
    horizon: float,
    burn_in: float,
    n_reps: int,
    seed: int,
    grid: Optional[tuple[int, int]] = None,
    workers: int = 1,
) -> SimulationConsistency:
    """
    Simulated post-burn-in loss against the stationary loss, in standard
    errors. The Inactive chain has no loss to compare, so its mean pool
    size E[A_T] is checked against (1 - e^(-T)) lambda_a instead.
    """
    if policy == Policy.INACTIVE:
        sizes = sample_pool_sizes(params, policy, [horizon], n_reps, seed, workers)[:, 0, 0].astype(float)
        simulated = float(sizes.mean())
        se = float(sizes.std(ddof=1) / math.sqrt(n_reps)) if n_reps > 1 else 0.0
        reference = (1 - math.exp(-horizon)) * params.lambda_a
        kind = 'inactive_mean_pool'
    else:
        report = run_replications(params, policy, horizon, n_reps, seed, burn_in=burn_in, workers=workers)
        simulated, se = report.loss_total, report.se_total
        reference = stationary_loss(policy, params, stationary_distribution(policy, params, grid)).loss_total
        kind = 'stationary_loss'

    gap = abs(simulated - reference)
    if se > 0:
        z = gap / se
    else:
        z = 0.0 if gap == 0 else math.inf
    logger.info('%s simulated %.6f (se %.2e) vs %s %.6f: z=%.2f', policy.value, simulated, se, kind, reference, z)
    return SimulationConsistency(
        policy=policy,
        reference_kind=kind,
        simulated=simulated,
        simulated_se=se,
        reference=reference,
        z_score=z,
        within_tolerance=z < CONSISTENCY_Z,
    )
