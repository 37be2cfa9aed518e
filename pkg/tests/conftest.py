import numpy as np
import pytest

from drift_se.schemas import (
    DataConfig,
    EncoderSpec,
    ExperimentConfig,
    GeneratorConfig,
    NoiseSchedule,
    Paradigm,
    SigmaKind,
    StftConfig,
    TrainConfig,
)
from drift_se.settings import Settings


# Override settings for tests
def get_settings_override():
    return Settings(log_level='DEBUG', checkpoint_every=0, density_grid_bins=8)


@pytest.fixture
def settings():
    return get_settings_override()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_stft():
    # F = 33 bins, so generator frames are 66-dimensional
    return StftConfig(window_length=64, hop_length=16, fft_size=64)


@pytest.fixture
def small_encoder():
    return EncoderSpec(layer_dims=(12, 10), taps=(0, 1), seed=3, frame_len=96, frame_hop=64)


@pytest.fixture
def small_data():
    return DataConfig(n_train=4, n_test=2, n_pool=4, utterance_length=1024)


@pytest.fixture
def speech_config(tmp_path, small_stft, small_encoder, small_data):
    """A denoise experiment small enough to train for an epoch inside a unit test."""

    def make(**overrides) -> ExperimentConfig:
        paradigm = overrides.pop('paradigm', Paradigm.direct_mapping)
        values = dict(
            task='denoise',
            seed=7,
            output_dir=tmp_path / 'run',
            snapshot_epochs=(1, 2),
            train=TrainConfig(
                batch_size=2,
                epochs=2,
                taps=(0, 1),
                paradigm=paradigm,
                sigma_schedule=NoiseSchedule(kind=SigmaKind.fixed_zero),
            ),
            encoder=small_encoder,
            generator=GeneratorConfig(
                paradigm=paradigm,
                input_dim=66,
                hidden_dims=(16,),
                output_dim=66,
                condition_dim=66 if paradigm == Paradigm.conditional else 0,
            ),
            stft=small_stft,
            data=small_data,
        )
        values.update(overrides)
        return ExperimentConfig(**values)

    return make


@pytest.fixture
def toy_config(tmp_path):
    def make(**overrides) -> ExperimentConfig:
        values = dict(
            task='toy2d',
            seed=1,
            output_dir=tmp_path / 'toy',
            steps=20,
            snapshot_epochs=(1, 2),
            train=TrainConfig(
                batch_size=32,
                epochs=2,
                lr=1e-3,
                weight_decay=0.0,
                paradigm=Paradigm.conditional,
                sigma_schedule=NoiseSchedule(kind=SigmaKind.fixed_zero),
            ),
            encoder=EncoderSpec(kind='identity', taps=(0,)),
            generator=GeneratorConfig(
                paradigm=Paradigm.conditional,
                input_dim=2,
                hidden_dims=(16, 16),
                output_dim=2,
                zero_init_output=False,
            ),
            data=DataConfig(toy_eval_samples=64),
        )
        values.update(overrides)
        return ExperimentConfig(**values)

    return make
