import logging
from argparse import ArgumentParser, Namespace
from typing import Optional, Sequence

import anyio

from nsfa.config import IbpDrawConfig, RunConfig, SimulationConfig, load_config
from nsfa.entity import Settings
from nsfa.runner import Runner

logger = logging.getLogger(__name__)

SETTINGS: dict[str, type[Settings]] = {
    'run': RunConfig,
    'simulate': SimulationConfig,
    'ibp-draw': IbpDrawConfig,
}


def add_settings_flags(
    parser: ArgumentParser,
    settings: type[Settings],
) -> None:
    for key, default in settings().flatten().items():
        parser.add_argument(
            f'--{key}', dest=key, default=None, metavar='VALUE',
            help=f'default: {default}',
        )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='nsfa', description='Nonparametric sparse factor analysis'
    )
    parser.add_argument('-v', '--verbose', action='store_true')
    commands = parser.add_subparsers(dest='command', required=True)

    for command, settings in SETTINGS.items():
        subparser = commands.add_parser(command)
        subparser.add_argument('--config', default='', metavar='FILE')
        add_settings_flags(subparser, settings)

    for command in ('metrics', 'timing'):
        subparser = commands.add_parser(command)
        subparser.add_argument('--output', default='output', metavar='DSN')

    return parser


def get_overrides(args: Namespace, settings: type[Settings]) -> dict:
    return {
        key: getattr(args, key)
        for key in settings().flatten()
        if getattr(args, key) is not None
    }


async def dispatch(args: Namespace) -> None:
    runner = Runner()
    if args.command == 'metrics':
        metrics = await runner.metrics(args.output)
        for key, value in metrics.items():
            logger.info('%s = %.6g', key, value)
        return
    if args.command == 'timing':
        await runner.timing(args.output)
        logger.info('timing report written to %s', args.output)
        return

    settings = SETTINGS[args.command]
    config = load_config(
        args.config, get_overrides(args, settings), settings
    )
    if isinstance(config, RunConfig):
        result = await runner.run(config)
        for key, value in result.metrics.items():
            logger.info('%s = %.6g', key, value)
    elif isinstance(config, SimulationConfig):
        files = await runner.simulate(config)
        logger.info('%d files written to %s', len(files), config.output)
    elif isinstance(config, IbpDrawConfig):
        for index, k_plus in await runner.ibp_draw(config):
            logger.info('draw %d: K+ = %d', index, k_plus)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        anyio.run(dispatch, args)
    except (ValueError, LookupError, OSError, NotImplementedError) as error:
        logger.error('%s failed: %s', args.command, error)
        return 1
    return 0
