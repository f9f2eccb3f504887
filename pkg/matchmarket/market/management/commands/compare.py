import logging

from pydantic import ValidationError

from ...cli import MarketCommand, market_columns, market_params, render_csv, render_json, resolve_policies
from ...exceptions import ConfigInvalid
from ...schemas import OMNISCIENT, MarketParams, Policy, SweepSpec
from ...services import (
    bound_set,
    params_from_densities,
    run_coupled_replications,
    stationary_distribution,
    stationary_loss,
)
from ...services.simulation import parallel_map

logger = logging.getLogger(__name__)

COLUMNS = (
    'policy', 'lambda_a', 'lambda_b', 'p', 'd_a', 'd_b', 'T', 'reps', 'seed',
    'sim_loss', 'sim_se', 'stationary_loss', 'upper_bound', 'lower_bound',
)


def _float_list(text):
    try:
        return [float(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise ConfigInvalid(f"expected a comma-separated list of numbers, got '{text}'")


def sweep_points(sweep: SweepSpec) -> list[MarketParams]:
    """Markets of a (d_a, d_b) sweep at a fixed p or a fixed lambda_b, in sweep order"""
    if (sweep.p is None) == (sweep.lambda_b is None):
        raise ConfigInvalid('sweep needs exactly one of p or lambda_b')
    pairs = [(d, d) for d in sweep.d_a] if sweep.d_b is None else [
        (d_a, d_b) for d_a in sweep.d_a for d_b in sweep.d_b
    ]
    if sweep.p is not None:
        return [params_from_densities(d_a, d_b, sweep.p) for d_a, d_b in pairs]
    return [params_from_densities(d_a, d_b, d_b / sweep.lambda_b) for d_a, d_b in pairs]


def compare_point(task: tuple) -> list[dict]:
    """Simulated, stationary and bound columns for one market, one row per policy"""
    params, names, horizon, reps, seed, burn_in, grid, with_stationary = task
    policies = [Policy.from_name(name) for name in names if name != OMNISCIENT]
    reports = run_coupled_replications(
        params, horizon, reps, seed, policies, include_omniscient=OMNISCIENT in names, burn_in=burn_in,
    )
    bounds = bound_set(params)
    rows = []
    for name in names:
        stationary = None
        if with_stationary and name != OMNISCIENT:
            policy = Policy.from_name(name)
            dist = stationary_distribution(policy, params, grid)
            stationary = stationary_loss(policy, params, dist).loss_total
        rows.append({
            'policy': name,
            **market_columns(params),
            'T': horizon,
            'reps': reps,
            'seed': seed,
            'sim_loss': reports[name].loss_total,
            'sim_se': reports[name].se_total,
            'stationary_loss': stationary,
            'upper_bound': bounds.upper_for(name),
            'lower_bound': bounds.lower_for(name),
        })
    logger.info('compare point d_a=%.4g d_b=%.4g done', params.d_a, params.d_b)
    return rows


class Command(MarketCommand):
    help = 'Simulated and stationary losses against the bounds over a (d_a, d_b) sweep, in long format'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--d-a', dest='sweep_d_a', help='Comma-separated d_a values')
        parser.add_argument('--d-b', dest='sweep_d_b', help='Comma-separated d_b values (default: d_b = d_a)')
        parser.add_argument('--fixed-p', type=float, dest='sweep_p', help='Sweep at this edge probability')
        parser.add_argument('--fixed-lambda-b', type=float, dest='sweep_lambda_b', help='Sweep at this lambda_b')
        parser.add_argument('--no-stationary', action='store_true', help='Skip the stationary solves')

    def overrides(self, options):
        overrides = super().overrides(options)
        if options.get('sweep_d_a'):
            try:
                overrides['sweep'] = SweepSpec(
                    d_a=_float_list(options['sweep_d_a']),
                    d_b=_float_list(options['sweep_d_b']) if options.get('sweep_d_b') else None,
                    p=options.get('sweep_p'),
                    lambda_b=options.get('sweep_lambda_b'),
                    policies=[options['policy']] if options.get('policy') else None,
                ).model_dump()
            except ValidationError as e:
                raise ConfigInvalid(str(e))
        return overrides

    def run(self, config, options):
        if config.sweep is None:
            points, grid = [market_params(config)], config.grid
            names = resolve_policies(config.policy, allow_omniscient=True)
        else:
            points, grid = sweep_points(config.sweep), None
            requested = config.sweep.policies or [config.policy]
            names = [name for value in requested for name in resolve_policies(value, allow_omniscient=True)]

        tasks = [
            (params, names, config.horizon, config.replications, config.seed, config.burn_in, grid,
             not options.get('no_stationary'))
            for params in points
        ]
        rows = [row for point_rows in parallel_map(compare_point, tasks, self.workers) for row in point_rows]

        if config.format == 'json':
            return render_json({'rows': rows, 'asymptotic_bounds': True}, config)
        return render_csv(COLUMNS, rows, config)
