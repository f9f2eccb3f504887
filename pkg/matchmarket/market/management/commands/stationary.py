import json
from pathlib import Path

from ...cli import MarketCommand, config_echo, market_params, render_json
from ...exceptions import ConfigInvalid
from ...schemas import Policy
from ...services import stationary_distribution, stationary_loss


class Command(MarketCommand):
    help = 'Stationary distribution of a pool-size chain and the losses it implies'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--functionals-out',
            help='Where to write the functionals JSON (default: next to --out, or inline as a comment)',
        )

    def run(self, config, options):
        try:
            policy = Policy.from_name(config.policy)
        except ValueError as e:
            raise ConfigInvalid(str(e))
        params = market_params(config)
        dist = stationary_distribution(policy, params, config.grid, method=config.method)
        functionals = stationary_loss(policy, params, dist)
        summary = {
            'grid': list(dist.grid),
            'leak': dist.leak,
            'method': dist.method,
            'residual': dist.residual,
            'functionals': functionals.model_dump(mode='json'),
        }

        if config.format == 'json':
            cells = [[int(i), int(j), float(dist.mass[i, j])] for i, j in zip(*dist.mass.nonzero())]
            return render_json({**summary, 'mass': cells}, config)

        functionals_path = options.get('functionals_out')
        if not functionals_path and options.get('out'):
            functionals_path = str(Path(options['out']).with_suffix('.functionals.json'))
        if functionals_path:
            Path(functionals_path).write_text(json.dumps(summary, indent=2) + '\n')
            return f'# config: {config_echo(config)}\n' + dist.to_csv()
        return f'# config: {config_echo(config)}\n' + dist.to_csv() + f'# functionals: {json.dumps(summary)}\n'
