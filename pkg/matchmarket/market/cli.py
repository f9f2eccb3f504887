"""
Shared plumbing for the management commands: run-config loading, flag
overrides and machine-readable emission.

Every command accepts a JSON ``--config`` file plus flags; flags win. The
effective configuration is echoed into every output (a ``# config:`` line
for CSV, a ``config`` key for JSON) so a table always says how it was made.
With ``--append`` a CSV run joins the table already in ``--out``: one header,
one config comment per run.
"""
import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from .exceptions import ConfigInvalid, GridTooSmall, MarketError
from .schemas import MATCHING_POLICIES, OMNISCIENT, MarketParams, Policy, RunConfig
from .services import validate_params

logger = logging.getLogger(__name__)

POLICY_ALL = 'all'


def parse_grid(text: str) -> tuple[int, int]:
    """'120x80' -> (120, 80)"""
    try:
        a_max, b_max = (int(part) for part in text.lower().split('x'))
    except ValueError:
        raise ConfigInvalid(f"grid must look like AxB (e.g. 120x80), got '{text}'")
    return a_max, b_max


def _format_validation_error(error: ValidationError) -> str:
    return '; '.join(
        f"{'.'.join(str(part) for part in item['loc']) or 'config'}: {item['msg']}"
        for item in error.errors()
    )


def load_run_config(path: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    """
    Reads the JSON config at `path` (if any), applies non-None overrides and
    validates the result, including the market parameters.

    Raises:
        ConfigInvalid: on unreadable or malformed JSON and on any field error
    """
    data: dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigInvalid(f'cannot read config {path}: {e}')
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f'config {path} is not valid JSON: {e}')
        if not isinstance(data, dict):
            raise ConfigInvalid(f'config {path} must hold a JSON object')
    data.update({key: value for key, value in overrides.items() if value is not None})
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigInvalid(_format_validation_error(e))
    validate_params(config.lambda_a, config.lambda_b, config.p)
    return config


def market_params(config: RunConfig) -> MarketParams:
    return validate_params(config.lambda_a, config.lambda_b, config.p)


def resolve_policies(name: str, allow_omniscient: bool = False) -> list[str]:
    """
    Policy names for a --policy value: one policy, 'omniscient', or 'all'
    (the four matching policies, then the omniscient benchmark when allowed).
    """
    key = name.strip().lower()
    if key == POLICY_ALL:
        names = [policy.value for policy in MATCHING_POLICIES]
        return names + [OMNISCIENT] if allow_omniscient else names
    if key == OMNISCIENT.lower():
        if not allow_omniscient:
            raise ConfigInvalid('the omniscient benchmark has no chain; pick a policy')
        return [OMNISCIENT]
    try:
        return [Policy.from_name(name).value]
    except ValueError as e:
        raise ConfigInvalid(str(e))


def config_echo(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode='json'), sort_keys=True)


def render_csv(columns: Sequence[str], rows: Iterable[dict[str, Any]], config: RunConfig) -> str:
    """CSV with a leading '# config: {...}' comment line; None cells stay empty"""
    buffer = io.StringIO()
    buffer.write(f'# config: {config_echo(config)}\n')
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator='\n', extrasaction='ignore')
    writer.writeheader()
    for row in rows:
        writer.writerow({key: ('' if value is None else value) for key, value in row.items()})
    return buffer.getvalue()


def _csv_header(text: str) -> Optional[str]:
    return next((line for line in text.splitlines() if not line.startswith('#')), None)


def append_csv(text: str, path: Path) -> None:
    """
    Appends one CSV run to `path`. A non-empty file keeps its single header:
    the new run adds its '# config:' comment line and its data rows, so a
    reader that skips '#' lines sees one table.

    Raises:
        ConfigInvalid: for JSON output, or when the columns differ from the file's
    """
    if not text.startswith('# config: '):
        raise ConfigInvalid('--append only applies to CSV output')
    if not path.exists() or path.stat().st_size == 0:
        path.write_text(text)
        return
    header = _csv_header(text)
    if header != _csv_header(path.read_text()):
        raise ConfigInvalid(f'cannot append to {path}: its columns differ from this output')
    lines = text.splitlines(keepends=True)
    body = [line for line in lines if line.rstrip('\n') != header]
    with path.open('a') as handle:
        handle.writelines(body)


def render_json(payload: dict[str, Any], config: RunConfig) -> str:
    return json.dumps({'config': config.model_dump(mode='json'), **payload}, indent=2) + '\n'


def market_columns(params: MarketParams) -> dict[str, float]:
    return {
        'lambda_a': params.lambda_a,
        'lambda_b': params.lambda_b,
        'p': params.p,
        'd_a': params.d_a,
        'd_b': params.d_b,
    }


class MarketCommand(BaseCommand):
    """
    Base class of the matchmarket commands. Subclasses implement `run`,
    which returns the text to emit; any MarketError becomes a CommandError
    and so a nonzero exit status.
    """

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON run config; flags override its fields')
        parser.add_argument('--policy', help="Greedy2, Patient2, Greedy1, Patient1, Inactive, omniscient or all")
        parser.add_argument('--seed', type=int)
        parser.add_argument('--out', help='Write output to this file instead of stdout')
        parser.add_argument('--append', action='store_true', help='Append CSV rows to --out under its existing header')
        parser.add_argument('--format', choices=['csv', 'json'])
        parser.add_argument('--grid', help='Truncation grid AxB')
        parser.add_argument('--reps', type=int, dest='replications')
        parser.add_argument('--horizon', type=float)
        parser.add_argument('--burn-in', type=float, dest='burn_in')
        parser.add_argument('--lambda-a', type=float, dest='lambda_a')
        parser.add_argument('--lambda-b', type=float, dest='lambda_b')
        parser.add_argument('--p', type=float)
        parser.add_argument('--sigma-a', type=float, dest='sigma_a')
        parser.add_argument('--sigma-b', type=float, dest='sigma_b')
        parser.add_argument('--method', choices=['auto', 'direct', 'power'])

    def overrides(self, options: dict[str, Any]) -> dict[str, Any]:
        fields = (
            'policy', 'seed', 'format', 'replications', 'horizon', 'burn_in',
            'lambda_a', 'lambda_b', 'p', 'sigma_a', 'sigma_b', 'method',
        )
        overrides = {field: options.get(field) for field in fields}
        if options.get('grid'):
            overrides['grid'] = parse_grid(options['grid'])
        return overrides

    @property
    def workers(self) -> int:
        return max(1, settings.MATCHMARKET_THREADS)

    def handle(self, *args, **options):
        try:
            config = load_run_config(options.get('config'), self.overrides(options))
            if options.get('append') and not options.get('out'):
                raise ConfigInvalid('--append needs --out')
            output = self.run(config, options)
            self.emit(output, options.get('out'), options.get('append', False))
        except GridTooSmall as e:
            raise CommandError(f'{e} (try --grid {e.suggested_grid[0]}x{e.suggested_grid[1]})'
                               if e.suggested_grid else str(e))
        except MarketError as e:
            raise CommandError(str(e))

    def emit(self, text: str, out: Optional[str], append: bool = False) -> None:
        if out and append:
            append_csv(text, Path(out))
            logger.info('Appended to %s', out)
        elif out:
            Path(out).write_text(text)
            logger.info('Wrote %s', out)
        else:
            self.stdout.write(text, ending='')

    def run(self, config: RunConfig, options: dict[str, Any]) -> str:
        raise NotImplementedError
