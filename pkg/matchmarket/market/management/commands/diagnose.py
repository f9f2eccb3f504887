from ...cli import MarketCommand, market_params, render_csv, render_json, resolve_policies
from ...schemas import ConcentrationReport, Policy
from ...services import (
    balance_residuals,
    characteristic_roots,
    check_1sided_regions,
    check_greedy2_tails,
    check_patient2_region,
    check_root_sandwiches,
    compare_sim_stationary,
    stationary_distribution,
)

COLUMNS = ('policy', 'check', 'region', 'value', 'threshold', 'passed', 'note')

# Cut-flux residuals of a solved chain, relative to lambda_a + lambda_b
BALANCE_TOLERANCE = 1e-8


def _concentration_rows(report: ConcentrationReport) -> list[dict]:
    return [
        {
            'policy': report.policy.value,
            'check': entry.proposition,
            'region': entry.region,
            'value': entry.tail_mass,
            'threshold': entry.threshold,
            'passed': entry.passed,
            'note': entry.note or ('skipped' if entry.skipped else ''),
        }
        for entry in report.entries
    ]


class Command(MarketCommand):
    help = 'Concentration, balance and root checks on solved chains, as a pass/fail table'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--simulate', action='store_true',
                            help='Also compare simulated and stationary losses (uses --reps, --horizon, --burn-in)')

    def run(self, config, options):
        params = market_params(config)
        names = resolve_policies(config.policy)
        roots = characteristic_roots(params, config.sigma_a, config.sigma_b)
        rows = []

        sandwiches = check_root_sandwiches(params, config.sigma_a, config.sigma_b)
        for name, passed in sandwiches.checks.items():
            rows.append({'policy': '', 'check': name, 'passed': passed,
                         'note': 'oriented' if sandwiches.swapped else ''})

        for name in names:
            policy = Policy.from_name(name)
            dist = stationary_distribution(policy, params, config.grid, method=config.method)
            if policy == Policy.GREEDY2:
                rows += _concentration_rows(check_greedy2_tails(dist, roots))
            elif policy == Policy.PATIENT2:
                rows += _concentration_rows(check_patient2_region(dist, roots))
            elif policy in (Policy.GREEDY1, Policy.PATIENT1):
                rows += _concentration_rows(check_1sided_regions(dist, roots, policy))

            tolerance = BALANCE_TOLERANCE * (params.lambda_a + params.lambda_b)
            residuals = balance_residuals(dist, policy, params)
            rows.append({'policy': name, 'check': 'balance_residual', 'value': residuals.worst,
                         'threshold': tolerance, 'passed': residuals.worst < tolerance,
                         'note': f'leak={dist.leak:.3g}'})

            if options.get('simulate'):
                consistency = compare_sim_stationary(
                    params, policy, config.horizon, config.burn_in, config.replications, config.seed,
                    grid=config.grid, workers=self.workers,
                )
                rows.append({'policy': name, 'check': f'simulation_{consistency.reference_kind}',
                             'value': consistency.z_score, 'threshold': 3.0,
                             'passed': consistency.within_tolerance,
                             'note': f'simulated={consistency.simulated:.6g} reference={consistency.reference:.6g}'})

        if config.format == 'json':
            return render_json({'checks': rows, 'passed': all(row['passed'] is not False for row in rows)}, config)
        return render_csv(COLUMNS, rows, config)
