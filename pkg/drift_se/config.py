"""Experiment configuration files: ``key = value`` lines under ``[section]`` headers."""

from __future__ import annotations

import configparser
import io
import pathlib
import typing

import pydantic

from .exceptions import ConfigError
from .logging import get_logger
from .schemas import ExperimentConfig

logger = get_logger()

# section name -> location inside ExperimentConfig
SECTIONS: dict[str, tuple[str, ...]] = {
    'experiment': (),
    'train': ('train',),
    'kernel': ('train', 'kernel'),
    'noise': ('train', 'sigma_schedule'),
    'encoder': ('encoder',),
    'generator': ('generator',),
    'stft': ('stft',),
    'compression': ('compression',),
    'data': ('data',),
    'unpaired': ('unpaired',),
    'metrics': ('metrics',),
}


def _nested(tree: dict[str, typing.Any], location: tuple[str, ...]) -> dict[str, typing.Any]:
    for key in location:
        tree = tree.setdefault(key, {})
    return tree


def parse_config_text(text: str, *, source: str = '<string>') -> dict[str, typing.Any]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as error:
        raise ConfigError(f'cannot parse {source}: {error}') from error

    tree: dict[str, typing.Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f'unknown section [{section}] in {source}')
        values = dict(parser.items(section))
        if section == 'experiment' and 'epochs' in values:
            _nested(tree, ('train',))['epochs'] = values.pop('epochs')
        _nested(tree, SECTIONS[section]).update(values)
    return tree


def build_config(tree: dict[str, typing.Any], *, source: str = '<string>') -> ExperimentConfig:
    try:
        return ExperimentConfig(**tree)
    except pydantic.ValidationError as error:
        problems = '; '.join(
            f"[{'.'.join(str(part) for part in item['loc']) or 'experiment'}] {item['msg']}"
            for item in error.errors()
        )
        raise ConfigError(f'invalid configuration in {source}: {problems}') from error


def load_config(
    path: str | pathlib.Path | None,
    *,
    task: str | None = None,
    seed: int | None = None,
    output_dir: str | pathlib.Path | None = None,
    perturb: bool | None = None,
) -> ExperimentConfig:
    """Read ``path`` and apply command-line overrides.

    ``seed`` replaces ``[experiment] seed``; one of the two must be present.
    """
    tree: dict[str, typing.Any] = {}
    source = '<defaults>'
    if path is not None:
        path = pathlib.Path(path)
        if not path.is_file():
            raise ConfigError(f'config file {path} does not exist')
        source = str(path)
        tree = parse_config_text(path.read_text(), source=source)

    experiment = tree
    if task is not None:
        if experiment.get('task') not in (None, task):
            logger.warning(f"⚠️ Task {experiment['task']!r} in {source} overridden by {task!r}")
        experiment['task'] = task
    if seed is not None:
        experiment['seed'] = seed
    if output_dir is not None:
        experiment['output_dir'] = output_dir
    if perturb is not None:
        experiment['perturb'] = perturb
    if 'seed' not in experiment:
        raise ConfigError(f'no seed given: set [experiment] seed in {source} or pass --seed')
    if 'task' not in experiment:
        raise ConfigError(f'no task given in {source}')
    return build_config(tree, source=source)


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config back to the sectioned text form accepted by :func:`load_config`."""
    data = cfg.model_dump(mode='json')
    parser = configparser.ConfigParser(interpolation=None)
    for section, location in SECTIONS.items():
        values = data
        for key in location:
            values = values[key]
        parser[section] = {
            key: _format(value)
            for key, value in values.items()
            if value is not None and not isinstance(value, dict)
        }
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def _format(value: typing.Any) -> str:
    if isinstance(value, (list, tuple)):
        return ', '.join(str(item) for item in value)
    return str(value).lower() if isinstance(value, bool) else str(value)
