from ...cli import MarketCommand, market_params, render_json
from ...services import bound_set, characteristic_roots, check_root_sandwiches


class Command(MarketCommand):
    help = 'Characteristic pool sizes and every asymptotic loss bound, as JSON'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--roots-only', action='store_true', help='Emit only the characteristic roots')

    def run(self, config, options):
        params = market_params(config)
        if options.get('roots_only'):
            roots = characteristic_roots(params, config.sigma_a, config.sigma_b)
            return render_json({'roots': roots.model_dump(mode='json')}, config)

        bounds = bound_set(params)
        sandwiches = check_root_sandwiches(params, config.sigma_a, config.sigma_b)
        return render_json(
            {
                **bounds.model_dump(mode='json'),
                'roots': sandwiches.roots.model_dump(mode='json'),
                'roots_oriented': sandwiches.swapped,
                'sandwich_checks': sandwiches.checks,
                'regime_flags': bounds.regime_flags + sandwiches.flags,
            },
            config,
        )
