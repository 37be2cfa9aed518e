"""Command line entry point: ``drift <task> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import pathlib
import sys
import traceback
import typing

import pydantic

from .app_metadata import metadata, version
from .config import load_config
from .exceptions import ConfigError, DriftSEError, NumericalError, PropertyCheckError
from .logging import get_logger
from .schemas import Task
from .settings import get_settings

logger = get_logger()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        **metadata, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {version}')
    parser.add_argument('task', choices=[task.value for task in Task])
    parser.add_argument('--config', type=pathlib.Path, help='key = value experiment file')
    parser.add_argument('--seed', type=int, help='overrides [experiment] seed')
    parser.add_argument('--out', type=pathlib.Path, help='output directory')
    parser.add_argument(
        '--perturb',
        action='store_true',
        default=None,
        help='inject a small deviation into the oracle check (drift-eval negative control)',
    )
    parser.add_argument('--resume', type=pathlib.Path, help='checkpoint to continue training from')
    parser.add_argument(
        '--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], type=str.upper
    )
    return parser


def run(args: argparse.Namespace) -> dict[str, typing.Any]:
    from .tasks import TASKS

    cfg = load_config(
        args.config, task=args.task, seed=args.seed, output_dir=args.out, perturb=args.perturb
    )
    if args.resume is not None and not args.resume.is_file():
        raise ConfigError(f'checkpoint {args.resume} does not exist')
    return TASKS[cfg.task](cfg, settings=get_settings(), resume=args.resume)


def main(argv: typing.Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        logger.setLevel(args.log_level)

    try:
        run(args)
    except (ConfigError, pydantic.ValidationError) as error:
        logger.error(f'❌ Configuration error: {error}')
        return 1
    except PropertyCheckError as error:
        logger.error(f'❌ {error}')
        return PropertyCheckError.exit_code
    except NumericalError as error:
        logger.error(f'❌ Numerical failure: {error} {error.diagnostics}')
        return NumericalError.exit_code
    except DriftSEError as error:
        logger.error(f'❌ {type(error).__name__}: {error}')
        return error.exit_code
    except Exception:
        logger.error(f'💥 Unexpected failure:\n{traceback.format_exc()}')
        return 2
    return 0


def cli() -> None:
    sys.exit(main())


if __name__ == '__main__':
    cli()
