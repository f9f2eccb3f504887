"""
Pool-size Markov chains (A_t, B_t) of the matching policies.

Each policy turns the market into a continuous-time chain on pairs of pool
sizes. The chain is truncated to {0..A_max} x {0..B_max}; transitions that
would leave the grid are censored (dropped) and the mass that ends up on the
outer boundary is reported as ``leak``.
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
from django.conf import settings
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ..exceptions import (
    ConfigInvalid,
    GridMismatch,
    GridTooSmall,
    HorizonNonPositive,
    NotConvergedWithinBudget,
    PolicyMismatch,
    SolverDiverged,
)
from ..schemas import (
    MarketParams,
    MixingTimeEstimate,
    Policy,
    PoolDistribution,
    RateEntry,
    StationaryFunctionals,
)
from .market_core import survival
from .simulation import sample_pool_sizes

logger = logging.getLogger(__name__)

Move = tuple[int, int]


def move_rates(policy: Policy, params: MarketParams, k, j) -> dict[Move, np.ndarray]:
    """Rate of every move (dk, dj) out of the states (k, j); k and j may be arrays"""
    la, lb, p = params.lambda_a, params.lambda_b, params.p
    k = np.asarray(k, dtype=float)
    j = np.asarray(j, dtype=float)
    qk = survival(p, k)  # no V-side neighbor among k U agents
    qj = survival(p, j)

    if policy == Policy.GREEDY2:
        return {
            (1, 0): la * qj,
            (0, 1): lb * qk,
            (-1, 0): k + lb * (1 - qk),
            (0, -1): j + la * (1 - qj),
        }
    if policy == Policy.PATIENT2:
        return {
            (1, 0): np.full_like(k, la),
            (0, 1): np.full_like(k, lb),
            (-1, 0): k * qj,
            (0, -1): j * qk,
            (-1, -1): k * (1 - qj) + j * (1 - qk),
        }
    if policy == Policy.GREEDY1:
        return {
            (1, 0): np.full_like(k, la),
            (0, 1): lb * qk,
            (-1, 0): k + lb * (1 - qk),
            (0, -1): j.copy(),
        }
    if policy == Policy.PATIENT1:
        return {
            (1, 0): np.full_like(k, la),
            (0, 1): np.full_like(k, lb),
            (-1, 0): k.copy(),
            (-1, -1): j * (1 - qk),
            (0, -1): j * qk,
        }
    # Inactive: two independent M/M/infinity queues
    return {
        (1, 0): np.full_like(k, la),
        (0, 1): np.full_like(k, lb),
        (-1, 0): k.copy(),
        (0, -1): j.copy(),
    }


def transition_rates(policy: Policy, params: MarketParams, state: tuple[int, int]) -> list[RateEntry]:
    """
    Outgoing transitions of one state. Zero rates and targets with a
    negative coordinate are omitted.
    """
    k, j = state
    if k < 0 or j < 0:
        raise ValueError(f'pool sizes must be non-negative, got {state}')
    entries = []
    for (dk, dj), rate in move_rates(policy, params, k, j).items():
        target = (k + dk, j + dj)
        rate = float(rate)
        if rate > 0 and min(target) >= 0:
            entries.append(RateEntry(source=(k, j), target=target, rate=rate))
    return entries


def default_grid(params: MarketParams) -> tuple[int, int]:
    """ceil(lambda + 10 sqrt(lambda + 1)) per side"""
    return (
        math.ceil(params.lambda_a + 10 * math.sqrt(params.lambda_a + 1)),
        math.ceil(params.lambda_b + 10 * math.sqrt(params.lambda_b + 1)),
    )


def _check_grid(grid: tuple[int, int]) -> tuple[int, int]:
    a_max, b_max = (int(g) for g in grid)
    if a_max < 1 or b_max < 1:
        raise ConfigInvalid(f'grid bounds must be >= 1, got {grid}')
    return a_max, b_max


def grid_states(grid: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (k, j) coordinates of the grid states, row-major in k"""
    k, j = np.meshgrid(np.arange(grid[0] + 1), np.arange(grid[1] + 1), indexing='ij')
    return k.ravel(), j.ravel()


def build_generator(policy: Policy, params: MarketParams, grid: tuple[int, int]) -> sparse.csr_matrix:
    """
    Censored generator matrix Q over the grid; state (k, j) sits at index
    k * (B_max + 1) + j.
    """
    a_max, b_max = _check_grid(grid)
    k, j = grid_states((a_max, b_max))
    n = k.size
    rows, cols, values = [], [], []
    outflow = np.zeros(n)
    for (dk, dj), rate in move_rates(policy, params, k, j).items():
        tk, tj = k + dk, j + dj
        keep = (rate > 0) & (tk >= 0) & (tk <= a_max) & (tj >= 0) & (tj <= b_max)
        source = np.flatnonzero(keep)
        rows.append(source)
        cols.append(tk[keep] * (b_max + 1) + tj[keep])
        values.append(rate[keep])
        outflow[keep] += rate[keep]
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    values.append(-outflow)
    return sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


def _solve_direct(generator: sparse.csr_matrix) -> np.ndarray:
    """pi Q = 0 with the last balance equation replaced by sum(pi) = 1"""
    n = generator.shape[0]
    system = sparse.vstack([generator.T.tocsr()[:-1, :], sparse.csr_matrix(np.ones((1, n)))]).tocsc()
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return spsolve(system, rhs)


def _solve_power(generator: sparse.csr_matrix, tolerance: float, residual_tolerance: float, max_iter: int):
    """Uniformized power iteration pi <- pi (I + Q / Lambda) from the uniform distribution"""
    n = generator.shape[0]
    uniform_rate = float(-generator.diagonal().min())
    if uniform_rate <= 0:
        return np.full(n, 1.0 / n), 0
    transposed = generator.T.tocsr()
    pi = np.full(n, 1.0 / n)
    for iteration in range(1, max_iter + 1):
        step = transposed @ pi / uniform_rate
        pi = pi + step
        if 0.5 * np.abs(step).sum() < tolerance and uniform_rate * np.abs(step).max() < residual_tolerance:
            return pi, iteration
    raise SolverDiverged(f'power iteration did not converge within {max_iter} iterations')


def boundary_mass(mass: np.ndarray) -> float:
    """Mass on the states with k = A_max or j = B_max"""
    return float(mass[-1, :].sum() + mass[:, -1].sum() - mass[-1, -1])


def stationary_distribution(
    policy: Policy,
    params: MarketParams,
    grid: Optional[tuple[int, int]] = None,
    method: str = 'auto',
    leak_threshold: Optional[float] = None,
) -> PoolDistribution:
    """
    Solves pi Q = 0, sum(pi) = 1 on the truncated grid.

    Args:
        policy: Chain to solve
        params: The market
        grid: (A_max, B_max); defaults to default_grid(params)
        method: 'direct' (sparse LU), 'power' (uniformization) or 'auto'
        leak_threshold: Largest boundary mass accepted; defaults to settings

    Raises:
        GridTooSmall: if the boundary mass exceeds leak_threshold
        SolverDiverged: if the residual max|pi Q| exceeds the solver tolerance
    """
    grid = _check_grid(grid or default_grid(params))
    if leak_threshold is None:
        leak_threshold = settings.MATCHMARKET_LEAK_THRESHOLD
    residual_tolerance = settings.MATCHMARKET_SOLVER_TOLERANCE

    generator = build_generator(policy, params, grid)
    n = generator.shape[0]
    if method == 'auto':
        method = 'direct' if n <= settings.MATCHMARKET_DIRECT_MAX_STATES else 'power'

    iterations = None
    if method == 'direct':
        pi = _solve_direct(generator)
    elif method == 'power':
        pi, iterations = _solve_power(
            generator,
            settings.MATCHMARKET_POWER_TOLERANCE,
            residual_tolerance,
            settings.MATCHMARKET_POWER_MAX_ITER,
        )
    else:
        raise ConfigInvalid(f"unknown solve method '{method}'")

    if not np.all(np.isfinite(pi)) or pi.min() < -residual_tolerance:
        raise SolverDiverged(f'{method} solve returned an invalid vector (min entry {np.nanmin(pi):.3e})')
    pi = np.clip(pi, 0.0, None)  # round-off only; larger negatives raised above
    pi /= pi.sum()
    residual = float(np.abs(generator.T @ pi).max())
    if residual > residual_tolerance:
        raise SolverDiverged(f'residual {residual:.3e} exceeds tolerance {residual_tolerance:.1e}')

    mass = pi.reshape(grid[0] + 1, grid[1] + 1)
    leak = boundary_mass(mass)
    logger.info(
        '%s stationary solve on %sx%s grid: method=%s iterations=%s residual=%.2e leak=%.2e',
        policy.value, grid[0], grid[1], method, iterations, residual, leak,
    )
    if leak > leak_threshold:
        raise GridTooSmall(
            f'boundary mass {leak:.3e} exceeds {leak_threshold:.1e} on grid {grid}',
            leak=leak,
            suggested_grid=(2 * grid[0], 2 * grid[1]),
        )
    return PoolDistribution(
        grid=grid, mass=mass, leak=leak, policy=policy, params=params, method=method, residual=residual,
    )


def stationary_loss(policy: Policy, params: MarketParams, dist: PoolDistribution) -> StationaryFunctionals:
    """
    Stationary expectations and the per-side losses they reduce to.

    Greedy sides lose E[size] / lambda; a patient side loses the agents
    that find no neighbor at criticality, E[A (1-p)^B] / lambda_a for U.

    Raises:
        PolicyMismatch: if `dist` was solved for another policy or market
    """
    if dist.policy is not None and dist.policy != policy:
        raise PolicyMismatch(f'distribution solved for {dist.policy.value}, requested {policy.value}')
    if dist.params is not None and dist.params != params:
        raise PolicyMismatch(f'distribution solved for {dist.params}, requested {params}')

    k, j = np.meshgrid(np.arange(dist.grid[0] + 1), np.arange(dist.grid[1] + 1), indexing='ij')
    mass = dist.mass
    e_a = float((k * mass).sum())
    e_b = float((j * mass).sum())
    e_a_geo = float((k * survival(params.p, j) * mass).sum())
    e_b_geo = float((j * survival(params.p, k) * mass).sum())

    la, lb = params.lambda_a, params.lambda_b
    if policy == Policy.PATIENT2:
        loss_a, loss_b = e_a_geo / la, e_b_geo / lb
    elif policy == Policy.PATIENT1:
        loss_a, loss_b = e_a / la, e_b_geo / lb
    else:
        loss_a, loss_b = e_a / la, e_b / lb

    return StationaryFunctionals(
        policy=policy,
        e_A=e_a,
        e_B=e_b,
        e_A_geo=e_a_geo,
        e_B_geo=e_b_geo,
        loss_a=loss_a,
        loss_b=loss_b,
        loss_total=(la * loss_a + lb * loss_b) / (la + lb),
    )


def _histogram(sizes: np.ndarray, grid: tuple[int, int]) -> tuple[np.ndarray, int]:
    """Counts of in-grid (A, B) samples and the number of samples outside the grid"""
    counts = np.zeros((grid[0] + 1, grid[1] + 1))
    inside = (sizes[:, 0] <= grid[0]) & (sizes[:, 1] <= grid[1])
    np.add.at(counts, (sizes[inside, 0], sizes[inside, 1]), 1.0)
    return counts, int((~inside).sum())


def empirical_distribution(
    params: MarketParams,
    policy: Policy,
    t: float,
    n_reps: int,
    seed: int,
    grid: Optional[tuple[int, int]] = None,
    workers: int = 1,
) -> PoolDistribution:
    """
    Histogram of (A_t, B_t) over `n_reps` independent trajectories started empty.

    Samples outside the grid are counted in ``leak`` (as a fraction of all
    samples); the in-grid histogram is normalized to total mass 1.
    """
    if not t > 0:
        raise HorizonNonPositive(f't must be > 0, got {t}')
    if n_reps < 1:
        raise ConfigInvalid(f'n_reps must be >= 1, got {n_reps}')
    grid = _check_grid(grid or default_grid(params))
    sizes = sample_pool_sizes(params, policy, [t], n_reps, seed, workers)[:, 0, :]
    counts, outside = _histogram(sizes, grid)
    if outside == n_reps:
        raise GridTooSmall(f'every sample at t={t} fell outside grid {grid}', leak=1.0,
                           suggested_grid=(2 * grid[0], 2 * grid[1]))
    return PoolDistribution(
        grid=grid,
        mass=counts / counts.sum(),
        leak=outside / n_reps,
        policy=policy,
        params=params,
        method='empirical',
    )


def tv_distance(d1: PoolDistribution, d2: PoolDistribution, l1_norm: bool = False) -> float:
    """
    Total variation distance 1/2 sum |d1 - d2|. With `l1_norm`
    the 1/2 factor is dropped and the value lies in [0, 2].

    Raises:
        GridMismatch: if the two grids differ
    """
    if tuple(d1.grid) != tuple(d2.grid):
        raise GridMismatch(f'grids differ: {d1.grid} vs {d2.grid}')
    total = float(np.abs(d1.mass - d2.mass).sum())
    return total if l1_norm else min(0.5 * total, 1.0)


def geometric_times(t_min: float, t_max: float, per_doubling: int = 4) -> np.ndarray:
    """t_min * 2^(i / per_doubling) up to and including the first point >= t_max"""
    steps = math.ceil(per_doubling * math.log2(t_max / t_min))
    return t_min * 2.0 ** (np.arange(steps + 1) / per_doubling)


def estimate_mixing_time(
    params: MarketParams,
    policy: Policy,
    epsilon: float,
    n_reps: int,
    seed: int,
    grid: Optional[tuple[int, int]] = None,
    times: Optional[Sequence[float]] = None,
    stationary: Optional[PoolDistribution] = None,
    workers: int = 1,
) -> MixingTimeEstimate:
    """
    First time on a geometric grid at which the empirical law of (A_t, B_t)
    is within `epsilon` of stationarity in total variation.

    Each replication is one trajectory observed at every grid time, so
    estimates for different epsilons from the same seed are nested.
    Out-of-grid samples count fully towards the distance.

    Raises:
        NotConvergedWithinBudget: if no sampled time reaches epsilon
    """
    if not epsilon > 0:
        raise ConfigInvalid(f'epsilon must be > 0, got {epsilon}')
    if stationary is None:
        stationary = stationary_distribution(policy, params, grid)
    grid = tuple(stationary.grid)
    pi = stationary.mass

    if epsilon >= 1:
        start = PoolDistribution.point_mass(grid, (0, 0))
        return MixingTimeEstimate(time=0.0, previous_time=0.0, tv=tv_distance(start, stationary), epsilon=epsilon)

    times = np.asarray(times if times is not None else geometric_times(0.05, 50.0), dtype=float)
    sizes = sample_pool_sizes(params, policy, times, n_reps, seed, workers)

    previous = 0.0
    for i, t in enumerate(times):
        counts, outside = _histogram(sizes[:, i, :], grid)
        tv = 0.5 * (float(np.abs(counts / n_reps - pi).sum()) + outside / n_reps)
        logger.debug('%s at t=%.4g: tv=%.4f', policy.value, t, tv)
        if tv <= epsilon:
            logger.info('%s mixing time for epsilon=%s: %.4g (resolution from %.4g)', policy.value, epsilon, t, previous)
            return MixingTimeEstimate(time=float(t), previous_time=previous, tv=min(tv, 1.0), epsilon=epsilon)
        previous = float(t)

    raise NotConvergedWithinBudget(f'distance never fell below {epsilon} up to t={times[-1]:.4g}')
