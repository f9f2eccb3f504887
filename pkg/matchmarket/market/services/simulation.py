"""
Discrete-event simulation of the dynamic bipartite market.

A run happens in two stages. ``sample_realization`` draws what nature
decides: two Poisson arrival streams, an Exp(1) lifetime per agent and the
compatibility coin of every opposite-side pair whose presence intervals
overlap when nobody is ever matched. A policy is then executed on that
realization with an event queue. Because every policy (and the omniscient
benchmark) reads the same realization for a given seed, coupled runs share
arrivals, lifetimes and coins by construction.
"""
import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..exceptions import ConfigInvalid, HorizonNonPositive, TimeOutOfRange
from ..schemas import OMNISCIENT, Agent, EventLog, LossReport, MarketParams, Policy, Side

logger = logging.getLogger(__name__)

REMAINING, MATCHED, PERISHED = 0, 1, 2
_OUTCOME_NAMES = {REMAINING: 'remaining', MATCHED: 'matched', PERISHED: 'perished'}
_SIDES = (Side.U, Side.V)


class Realization:
    """
    Arrivals, lifetimes and edge coins of the no-matching market on [0, horizon).

    Agents are numbered in arrival order. ``side`` holds 0 for U and 1 for V;
    ``adjacency[x]`` lists every agent whose presence interval overlaps x's
    and whose coin with x came up heads.
    """

    def __init__(
        self,
        params: MarketParams,
        horizon: float,
        side: np.ndarray,
        arrival: np.ndarray,
        criticality: np.ndarray,
        adjacency: list[list[int]],
        seed: int = 0,
        replication: int = 0,
        tiebreak_seed: Optional[np.random.SeedSequence] = None,
    ):
        self.params = params
        self.horizon = horizon
        self.side = side
        self.arrival = arrival
        self.criticality = criticality
        self.adjacency = adjacency
        self.seed = seed
        self.replication = replication
        self.tiebreak_seed = tiebreak_seed or np.random.SeedSequence(seed, spawn_key=(replication, 3))

    @property
    def size(self) -> int:
        return len(self.arrival)

    @classmethod
    def from_intervals(
        cls,
        params: MarketParams,
        horizon: float,
        intervals: Sequence[tuple[Side, float, float]],
        edges: Iterable[tuple[int, int]] = (),
        seed: int = 0,
    ) -> 'Realization':
        """
        Hand-built realization from (side, arrival, criticality) triples.
        Edges between same-side agents or disjoint intervals are dropped.
        """
        order = sorted(range(len(intervals)), key=lambda i: (intervals[i][1], i))
        relabel = {old: new for new, old in enumerate(order)}
        side = np.array([0 if intervals[i][0] == Side.U else 1 for i in order], dtype=np.int8)
        arrival = np.array([intervals[i][1] for i in order], dtype=float)
        criticality = np.array([intervals[i][2] for i in order], dtype=float)
        adjacency: list[list[int]] = [[] for _ in order]
        for x, y in edges:
            x, y = relabel[x], relabel[y]
            overlap = max(arrival[x], arrival[y]) < min(criticality[x], criticality[y])
            if side[x] != side[y] and overlap:
                adjacency[x].append(y)
                adjacency[y].append(x)
        return cls(params, horizon, side, arrival, criticality, adjacency, seed=seed)


class _Execution:
    """Per-agent outcome arrays of one policy executed on one realization"""

    def __init__(self, n: int):
        self.outcome = np.full(n, REMAINING, dtype=np.int8)
        self.partner = np.full(n, -1, dtype=np.int64)
        self.match_time = np.full(n, np.nan)
        self.edges: list[tuple[int, int]] = []

    def departure(self, realization: Realization) -> np.ndarray:
        """End of each presence interval; +inf for agents still waiting at the horizon"""
        departure = np.where(self.outcome == MATCHED, self.match_time, realization.criticality)
        return np.where(self.outcome == REMAINING, np.inf, departure)


def _check_horizon(horizon: float) -> None:
    if not horizon > 0:
        raise HorizonNonPositive(f'horizon must be > 0, got {horizon}')


def _check_burn_in(burn_in: float, horizon: float) -> None:
    if not 0 <= burn_in < horizon:
        raise TimeOutOfRange(f'burn_in must lie in [0, {horizon}), got {burn_in}')


def _streams(seed: int, replication: int) -> list[np.random.SeedSequence]:
    """Independent substreams for arrivals, lifetimes, coins and tie-breaks"""
    return [np.random.SeedSequence(seed, spawn_key=(replication, purpose)) for purpose in range(4)]


def sample_realization(params: MarketParams, horizon: float, seed: int, replication: int = 0) -> Realization:
    """
    Draws the no-matching realization of the market on [0, horizon).

    Args:
        params: The market
        horizon: Length T of the observation window
        seed: Root seed of the run
        replication: Replication index; replication 0 is the run of `seed` itself

    Returns:
        Realization with every overlapping opposite-side pair's coin resolved
    """
    _check_horizon(horizon)
    arrivals_ss, lifetimes_ss, coins_ss, tiebreak_ss = _streams(seed, replication)

    arrivals_rng = np.random.default_rng(arrivals_ss)
    times = []
    for rate in (params.lambda_a, params.lambda_b):
        count = arrivals_rng.poisson(rate * horizon)
        times.append(np.sort(arrivals_rng.uniform(0.0, horizon, size=count)))
    all_times = np.concatenate(times)
    all_sides = np.concatenate([np.zeros(len(times[0]), dtype=np.int8), np.ones(len(times[1]), dtype=np.int8)])
    order = np.argsort(all_times, kind='stable')
    arrival = all_times[order]
    side = all_sides[order]

    lifetimes = np.random.default_rng(lifetimes_ss).exponential(1.0, size=len(arrival))
    criticality = arrival + lifetimes

    # Coins against every agent still present (in the no-matching market) at each arrival
    coins_rng = np.random.default_rng(coins_ss)
    adjacency: list[list[int]] = [[] for _ in range(len(arrival))]
    alive: tuple[list[int], list[int]] = ([], [])
    p = params.p
    for x in range(len(arrival)):
        t = arrival[x]
        s = side[x]
        opposite = [y for y in alive[1 - s] if criticality[y] > t]
        alive[1 - s][:] = opposite
        if opposite:
            heads = coins_rng.random(len(opposite)) < p
            for y, head in zip(opposite, heads):
                if head:
                    adjacency[x].append(y)
                    adjacency[y].append(x)
        alive[s].append(x)

    logger.debug('Realization seed=%s rep=%s: %s agents over T=%s', seed, replication, len(arrival), horizon)
    return Realization(
        params, horizon, side, arrival, criticality, adjacency,
        seed=seed, replication=replication, tiebreak_seed=tiebreak_ss,
    )


def execute_policy(realization: Realization, policy: Policy) -> _Execution:
    """
    Runs `policy` on a realization with a (time, sequence) priority queue.

    Greedy agents match uniformly at random among current neighbors on
    arrival, patient agents at their critical time; inactive agents never
    initiate. Matched pairs leave instantly, unmatched critical agents perish.
    """
    n = realization.size
    arrival = realization.arrival
    criticality = realization.criticality
    side = realization.side
    adjacency = realization.adjacency
    horizon = realization.horizon

    tiebreak = np.random.default_rng(realization.tiebreak_seed)
    result = _Execution(n)
    in_pool = np.zeros(n, dtype=bool)
    greedy = tuple(policy.is_greedy_on(s) for s in _SIDES)
    patient = tuple(policy.is_patient_on(s) for s in _SIDES)
    critical_queue: list[tuple[float, int]] = []

    def pick(candidates: list[int]) -> int:
        if len(candidates) == 1:
            return candidates[0]
        candidates.sort()
        return candidates[int(tiebreak.integers(len(candidates)))]

    def match(x: int, y: int, t: float) -> None:
        result.outcome[x] = result.outcome[y] = MATCHED
        result.partner[x], result.partner[y] = y, x
        result.match_time[x] = result.match_time[y] = t
        in_pool[x] = in_pool[y] = False

    def on_critical(x: int) -> None:
        if not in_pool[x]:
            return
        if patient[side[x]]:
            neighbors = [y for y in adjacency[x] if in_pool[y]]
            if neighbors:
                match(x, pick(neighbors), criticality[x])
                return
        result.outcome[x] = PERISHED
        in_pool[x] = False

    for x in range(n):
        t = arrival[x]
        while critical_queue and critical_queue[0][0] < t:
            on_critical(heapq.heappop(critical_queue)[1])

        neighbors = [y for y in adjacency[x] if in_pool[y]]
        for y in neighbors:
            result.edges.append((x, y) if side[x] == 0 else (y, x))

        if greedy[side[x]] and neighbors:
            match(x, pick(neighbors), t)
        else:
            in_pool[x] = True
            heapq.heappush(critical_queue, (criticality[x], x))

        if policy == Policy.GREEDY2 and in_pool[x]:
            # Under Greedy2 the pool graph stays edgeless; only arrivals add edges
            assert not any(in_pool[y] for y in adjacency[x]), f'pool edge created by agent {x}'

    while critical_queue and critical_queue[0][0] <= horizon:
        on_critical(heapq.heappop(critical_queue)[1])

    return result


def loss_report(
    realization: Realization,
    outcome: np.ndarray,
    label: str,
    burn_in: float = 0.0,
) -> LossReport:
    """
    Loss accounting for one run.

    Counts cover the whole run, so perished + matched + remaining = arrived
    per side. Losses count agents that perished at a critical time inside
    [burn_in, T], divided by the expected arrivals lambda * (T - burn_in).
    """
    params = realization.params
    window = realization.horizon - burn_in
    counts = {}
    losses = []
    for s, rate in ((0, params.lambda_a), (1, params.lambda_b)):
        on_side = realization.side == s
        perished = on_side & (outcome == PERISHED)
        counts[s] = (
            int(on_side.sum()),
            int((on_side & (outcome == MATCHED)).sum()),
            int(perished.sum()),
            int((on_side & (outcome == REMAINING)).sum()),
        )
        in_window = int((perished & (realization.criticality >= burn_in)).sum())
        losses.append(in_window / (rate * window))

    zero_denominator = realization.size == 0
    if zero_denominator:
        losses = [0.0, 0.0]
    loss_total = (params.lambda_a * losses[0] + params.lambda_b * losses[1]) / (params.lambda_a + params.lambda_b)
    return LossReport(
        policy=label,
        horizon=realization.horizon,
        burn_in=burn_in,
        loss_a=losses[0],
        loss_b=losses[1],
        loss_total=loss_total,
        arrived_a=counts[0][0], matched_a=counts[0][1], perished_a=counts[0][2], remaining_a=counts[0][3],
        arrived_b=counts[1][0], matched_b=counts[1][1], perished_b=counts[1][2], remaining_b=counts[1][3],
        zero_denominator=zero_denominator,
    )


def aggregate_reports(reports: Sequence[LossReport]) -> LossReport:
    """Mean losses with standard errors of the mean; counts are summed"""
    first = reports[0]
    n = len(reports)
    losses = np.array([[r.loss_a, r.loss_b, r.loss_total] for r in reports])
    means = losses.mean(axis=0)
    ses = losses.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(3)
    count_fields = (
        'perished_a', 'perished_b', 'matched_a', 'matched_b',
        'remaining_a', 'remaining_b', 'arrived_a', 'arrived_b',
    )
    counts = {name: sum(getattr(r, name) for r in reports) for name in count_fields}
    return LossReport(
        policy=first.policy,
        horizon=first.horizon,
        burn_in=first.burn_in,
        n_reps=n,
        loss_a=float(means[0]),
        loss_b=float(means[1]),
        loss_total=float(means[2]),
        se_a=float(ses[0]),
        se_b=float(ses[1]),
        se_total=float(ses[2]),
        zero_denominator=all(r.zero_denominator for r in reports),
        **counts,
    )


def build_event_log(
    realization: Realization,
    policy: Policy,
    execution: _Execution,
    snapshot_times: Optional[Sequence[float]] = None,
) -> EventLog:
    agents = tuple(
        Agent(
            id=x,
            side=_SIDES[realization.side[x]],
            arrival_time=float(realization.arrival[x]),
            criticality_time=float(realization.criticality[x]),
            outcome=_OUTCOME_NAMES[int(execution.outcome[x])],
            partner_id=int(execution.partner[x]) if execution.outcome[x] == MATCHED else None,
            match_time=float(execution.match_time[x]) if execution.outcome[x] == MATCHED else None,
        )
        for x in range(realization.size)
    )
    log = EventLog(
        params=realization.params,
        policy=policy,
        horizon=realization.horizon,
        seed=realization.seed,
        replication=realization.replication,
        agents=agents,
        edges=frozenset(execution.edges),
    )
    if snapshot_times is not None:
        log = log.model_copy(update={'pool_snapshots': tuple(pool_size_timeseries(log, snapshot_times))})
    return log


def sample_trajectory(
    params: MarketParams,
    policy: Policy,
    horizon: float,
    seed: int,
    snapshot_times: Optional[Sequence[float]] = None,
    burn_in: float = 0.0,
) -> tuple[EventLog, LossReport]:
    """
    Simulates one trajectory on [0, horizon]; deterministic in (params, policy, horizon, seed).

    Raises:
        HorizonNonPositive: if horizon <= 0
    """
    _check_horizon(horizon)
    _check_burn_in(burn_in, horizon)
    realization = sample_realization(params, horizon, seed)
    execution = execute_policy(realization, policy)
    log = build_event_log(realization, policy, execution, snapshot_times)
    return log, loss_report(realization, execution.outcome, policy.value, burn_in)


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map, fanned out over a process pool when workers > 1"""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))


def _replicate(task: tuple) -> LossReport:
    params, policy, horizon, seed, replication, burn_in = task
    realization = sample_realization(params, horizon, seed, replication)
    execution = execute_policy(realization, policy)
    return loss_report(realization, execution.outcome, policy.value, burn_in)


def run_replications(
    params: MarketParams,
    policy: Policy,
    horizon: float,
    n_reps: int,
    seed: int,
    burn_in: float = 0.0,
    workers: int = 1,
) -> LossReport:
    """
    Monte Carlo estimate of the loss over `n_reps` independent trajectories.

    Replication i draws its substreams from SeedSequence(seed, spawn_key=(i, purpose)), so a single
    replication reproduces sample_trajectory(seed).
    """
    if n_reps < 1:
        raise ConfigInvalid(f'n_reps must be >= 1, got {n_reps}')
    _check_horizon(horizon)
    _check_burn_in(burn_in, horizon)
    tasks = [(params, policy, horizon, seed, i, burn_in) for i in range(n_reps)]
    reports = parallel_map(_replicate, tasks, workers)
    report = aggregate_reports(reports)
    logger.info(
        '%s: %s replications, T=%s, loss_total=%.6f (se %.2e)',
        policy.value, n_reps, horizon, report.loss_total, report.se_total,
    )
    return report


def coupled_run(
    params: MarketParams,
    horizon: float,
    seed: int,
    policies: Sequence[Policy],
    snapshot_times: Optional[Sequence[float]] = None,
    burn_in: float = 0.0,
) -> list[tuple[EventLog, LossReport]]:
    """Runs every policy on one shared realization (common random numbers)"""
    if not policies:
        raise ConfigInvalid('coupled_run needs at least one policy')
    _check_horizon(horizon)
    _check_burn_in(burn_in, horizon)
    realization = sample_realization(params, horizon, seed)
    runs = []
    for policy in policies:
        execution = execute_policy(realization, policy)
        runs.append((
            build_event_log(realization, policy, execution, snapshot_times),
            loss_report(realization, execution.outcome, policy.value, burn_in),
        ))
    return runs


def _coupled_replicate(task: tuple) -> list[LossReport]:
    # Imported here to keep omniscient -> simulation a one-way dependency
    from .omniscient import omniscient_execution

    params, policies, include_omniscient, horizon, seed, replication, burn_in = task
    realization = sample_realization(params, horizon, seed, replication)
    reports = [
        loss_report(realization, execute_policy(realization, policy).outcome, policy.value, burn_in)
        for policy in policies
    ]
    if include_omniscient:
        execution = omniscient_execution(realization, burn_in)
        reports.append(loss_report(realization, execution.outcome, OMNISCIENT, burn_in))
    return reports


def run_coupled_replications(
    params: MarketParams,
    horizon: float,
    n_reps: int,
    seed: int,
    policies: Sequence[Policy],
    include_omniscient: bool = True,
    burn_in: float = 0.0,
    workers: int = 1,
) -> dict[str, LossReport]:
    """
    Aggregated losses of several policies (and optionally the omniscient
    benchmark) over `n_reps` shared realizations, keyed by row label.
    """
    if n_reps < 1:
        raise ConfigInvalid(f'n_reps must be >= 1, got {n_reps}')
    _check_horizon(horizon)
    _check_burn_in(burn_in, horizon)
    tasks = [(params, tuple(policies), include_omniscient, horizon, seed, i, burn_in) for i in range(n_reps)]
    per_rep = parallel_map(_coupled_replicate, tasks, workers)
    labels = [r.policy for r in per_rep[0]]
    return {
        label: aggregate_reports([reports[k] for reports in per_rep])
        for k, label in enumerate(labels)
    }


def pool_size_timeseries(log: EventLog, sample_times: Sequence[float]) -> list[tuple[float, int, int]]:
    """
    Exact pool sizes (A_t, B_t) at each requested time, reconstructed from the log.
    An agent counts at t when arrival_time <= t < departure_time.

    Raises:
        TimeOutOfRange: if a sample time lies outside [0, horizon]
    """
    times = np.asarray(sample_times, dtype=float)
    if times.size and (times.min() < 0 or times.max() > log.horizon):
        raise TimeOutOfRange(f'sample times must lie in [0, {log.horizon}]')
    if not log.agents:
        return [(float(t), 0, 0) for t in times]

    arrival = np.array([a.arrival_time for a in log.agents])
    departure = np.array([a.departure_time for a in log.agents])
    on_u = np.array([a.side == Side.U for a in log.agents])
    present = (arrival[None, :] <= times[:, None]) & (times[:, None] < departure[None, :])
    sizes_a = (present & on_u).sum(axis=1)
    sizes_b = (present & ~on_u).sum(axis=1)
    return [(float(t), int(a), int(b)) for t, a, b in zip(times, sizes_a, sizes_b)]


def pool_sizes_at(realization: Realization, execution: _Execution, times: np.ndarray) -> np.ndarray:
    """(A_t, B_t) rows for each time, straight from the outcome arrays"""
    departure = execution.departure(realization)
    present = (realization.arrival[None, :] <= times[:, None]) & (times[:, None] < departure[None, :])
    on_u = realization.side == 0
    return np.stack([(present & on_u).sum(axis=1), (present & ~on_u).sum(axis=1)], axis=1)


def _sample_pool_sizes(task: tuple) -> np.ndarray:
    params, policy, horizon, seed, replication, times = task
    realization = sample_realization(params, horizon, seed, replication)
    return pool_sizes_at(realization, execute_policy(realization, policy), times)


def sample_pool_sizes(
    params: MarketParams,
    policy: Policy,
    times: Sequence[float],
    n_reps: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """
    Pool sizes of `n_reps` independent runs at each sample time.

    Returns:
        Integer array of shape (n_reps, len(times), 2)
    """
    times = np.asarray(times, dtype=float)
    horizon = float(times.max())
    _check_horizon(horizon)
    tasks = [(params, policy, horizon, seed, i, times) for i in range(n_reps)]
    return np.stack(parallel_map(_sample_pool_sizes, tasks, workers))
