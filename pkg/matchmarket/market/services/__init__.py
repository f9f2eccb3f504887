"""
Services package for the matchmarket application

This package contains the market engine:
- market_core: parameter validation and density arithmetic
- simulation / omniscient: event-driven trajectories and the offline benchmark
- ctmc: pool-size Markov chains and their stationary solves
- bounds: characteristic roots and closed-form loss bounds
- diagnostics: concentration, balance and cross-oracle checks
"""

from .bounds import (
    bound_set,
    characteristic_roots,
    check_root_sandwiches,
    lower_bounds,
    solve_characteristic_root,
    solve_l1,
    upper_bounds,
)
from .ctmc import (
    default_grid,
    empirical_distribution,
    estimate_mixing_time,
    stationary_distribution,
    stationary_loss,
    transition_rates,
    tv_distance,
)
from .diagnostics import (
    balance_residuals,
    check_1sided_regions,
    check_greedy2_tails,
    check_patient2_region,
    compare_sim_stationary,
)
from .market_core import densities, params_from_densities, validate_params
from .omniscient import omniscient_loss
from .simulation import (
    coupled_run,
    pool_size_timeseries,
    run_coupled_replications,
    run_replications,
    sample_pool_sizes,
    sample_trajectory,
)

__all__ = [
    'balance_residuals',
    'bound_set',
    'characteristic_roots',
    'check_1sided_regions',
    'check_greedy2_tails',
    'check_patient2_region',
    'check_root_sandwiches',
    'compare_sim_stationary',
    'coupled_run',
    'default_grid',
    'densities',
    'empirical_distribution',
    'estimate_mixing_time',
    'lower_bounds',
    'omniscient_loss',
    'params_from_densities',
    'pool_size_timeseries',
    'run_coupled_replications',
    'run_replications',
    'sample_pool_sizes',
    'sample_trajectory',
    'solve_characteristic_root',
    'solve_l1',
    'stationary_distribution',
    'stationary_loss',
    'transition_rates',
    'tv_distance',
    'upper_bounds',
    'validate_params',
]
