from ...cli import MarketCommand, market_columns, market_params, render_csv, render_json, resolve_policies
from ...schemas import OMNISCIENT, Policy
from ...services import run_coupled_replications, run_replications

COLUMNS = (
    'policy', 'lambda_a', 'lambda_b', 'p', 'd_a', 'd_b', 'T', 'reps', 'seed',
    'loss_a', 'loss_b', 'loss_total', 'se_a', 'se_b', 'se_total',
)


class Command(MarketCommand):
    help = 'Monte Carlo loss of a policy (or, with --policy all, every policy on shared randomness)'

    def run(self, config, options):
        params = market_params(config)
        names = resolve_policies(config.policy, allow_omniscient=True)

        if len(names) == 1 and names[0] != OMNISCIENT:
            reports = [run_replications(
                params, Policy.from_name(names[0]), config.horizon, config.replications, config.seed,
                burn_in=config.burn_in, workers=self.workers,
            )]
        else:
            policies = [Policy.from_name(name) for name in names if name != OMNISCIENT]
            by_label = run_coupled_replications(
                params, config.horizon, config.replications, config.seed, policies,
                include_omniscient=OMNISCIENT in names, burn_in=config.burn_in, workers=self.workers,
            )
            reports = [by_label[name] for name in names]

        if config.format == 'json':
            return render_json({'reports': [report.model_dump(mode='json') for report in reports]}, config)

        rows = [
            {
                'policy': report.policy,
                **market_columns(params),
                'T': config.horizon,
                'reps': report.n_reps,
                'seed': config.seed,
                'loss_a': report.loss_a,
                'loss_b': report.loss_b,
                'loss_total': report.loss_total,
                'se_a': report.se_a,
                'se_b': report.se_b,
                'se_total': report.se_total,
            }
            for report in reports
        ]
        return render_csv(COLUMNS, rows, config)
