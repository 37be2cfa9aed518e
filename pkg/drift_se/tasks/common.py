from __future__ import annotations

import pathlib
import typing

import numpy as np

from ..config import dump_config
from ..exceptions import ConfigError
from ..generator import Generator
from ..logging import get_logger
from ..schemas import ExperimentConfig, TrainConfig
from ..settings import Settings, get_settings
from ..trainer import Pipeline, Trainer

logger = get_logger()


class RunSeeds(typing.NamedTuple):
    init: int
    train: int
    evaluation: int


def run_seeds(seed: int) -> RunSeeds:
    """Independent child seeds for parameter init, the training stream and evaluation draws."""
    children = np.random.SeedSequence(seed).spawn(3)
    return RunSeeds(*(int(child.generate_state(1, np.uint64)[0]) for child in children))


def prepare_output(cfg: ExperimentConfig) -> pathlib.Path:
    out_dir = pathlib.Path(cfg.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise ConfigError(f'output directory {out_dir} is not writable: {error}') from error
    (out_dir / 'config.ini').write_text(dump_config(cfg))
    logger.info(f'🚀 Running {cfg.task.value} (seed={cfg.seed}) into {out_dir}')
    return out_dir


def make_trainer(
    cfg: ExperimentConfig,
    pipeline: Pipeline,
    out_dir: pathlib.Path,
    *,
    resume: pathlib.Path | None = None,
    train: TrainConfig | None = None,
) -> Trainer:
    seeds = run_seeds(cfg.seed)
    train = (train or cfg.train).model_copy(update={'seed': seeds.train})
    if resume is not None:
        return Trainer.resume(resume, pipeline, train, out_dir=out_dir)
    generator = Generator(cfg.generator.model_copy(update={'seed': seeds.init}))
    logger.info(
        f'🧮 Generator ({cfg.generator.paradigm.value}) with {generator.parameter_count():,} '
        'parameters'
    )
    return Trainer(generator, pipeline, train, out_dir=out_dir)


def maybe_checkpoint(
    trainer: Trainer,
    out_dir: pathlib.Path,
    *,
    settings: Settings | None = None,
    final: bool = False,
    name: str = 'checkpoint.bin',
) -> None:
    every = (settings or get_settings()).checkpoint_every
    epoch = trainer.state.epoch
    if final or (every and epoch % every == 0):
        trainer.save(out_dir / name)
