from __future__ import annotations

import enum
import pathlib
import typing

import pydantic


class Paradigm(str, enum.Enum):
    direct_mapping = 'direct_mapping'
    conditional = 'conditional'


class Pairing(str, enum.Enum):
    paired = 'paired'
    unpaired = 'unpaired'


class NegativeScope(str, enum.Enum):
    batch = 'batch'
    utterance = 'utterance'


class EncoderKind(str, enum.Enum):
    identity = 'identity'
    random_stack = 'random_stack'


class CleanKind(str, enum.Enum):
    harmonic = 'harmonic'
    am_chirp = 'am-chirp'


class NoiseKind(str, enum.Enum):
    white = 'white'
    lowpass = 'lowpass'
    bandpass = 'bandpass'


class SigmaKind(str, enum.Enum):
    log_normal = 'log_normal'
    fixed_zero = 'fixed_zero'


class Activation(str, enum.Enum):
    silu = 'silu'
    tanh = 'tanh'
    identity = 'identity'


class Task(str, enum.Enum):
    toy2d = 'toy2d'
    denoise = 'denoise'
    unpaired = 'unpaired'
    drift_eval = 'drift-eval'
    stft_check = 'stft-check'


def _split_list(value: typing.Any) -> typing.Any:
    """Accept comma separated strings from key=value config files."""
    if isinstance(value, str):
        value = value.strip().strip('{}[]()')
        return tuple(item.strip() for item in value.split(',') if item.strip())
    return value


class KernelConfig(pydantic.BaseModel):
    """Exponential kernel exp(-||x - y||_2 / tau), one term per temperature."""

    model_config = pydantic.ConfigDict(frozen=True)

    temperatures: tuple[float, ...] = pydantic.Field(default=(0.1, 0.5, 1.0))
    norm: typing.Literal['l2'] = 'l2'

    @pydantic.field_validator('temperatures', mode='before')
    @classmethod
    def parse_temperatures(cls, value):
        return _split_list(value)

    @pydantic.field_validator('temperatures')
    @classmethod
    def check_temperatures(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError('at least one temperature is required')
        if any(not tau > 0 for tau in value):
            raise ValueError(f'temperatures must be positive, got {value}')
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f'temperatures must be strictly increasing, got {value}')
        return value


class NoiseSchedule(pydantic.BaseModel):
    """Truncated log-normal distribution of the noise injection level sigma."""

    model_config = pydantic.ConfigDict(frozen=True)

    kind: SigmaKind = SigmaKind.log_normal
    mu: float = -3.0
    sigma_log: float = pydantic.Field(default=1.2, ge=0)
    lo: float = pydantic.Field(default=0.01, gt=0)
    hi: float = 0.3
    max_iterations: int = pydantic.Field(default=10_000, gt=0)

    @pydantic.model_validator(mode='after')
    def check_bounds(self) -> NoiseSchedule:
        if not self.lo < self.hi:
            raise ValueError(f'need 0 < lo < hi, got lo={self.lo}, hi={self.hi}')
        return self


class EncoderSpec(pydantic.BaseModel):
    """Frozen feature extractor description; the weights are derived from ``seed``."""

    model_config = pydantic.ConfigDict(frozen=True)

    kind: EncoderKind = EncoderKind.random_stack
    layer_dims: tuple[int, ...] = (64, 64, 64)
    taps: tuple[int, ...] = (0, 1, 2)
    seed: int = 0
    frame_len: int = pydantic.Field(default=400, gt=0)
    frame_hop: int = pydantic.Field(default=320, gt=0)

    @pydantic.field_validator('layer_dims', 'taps', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)

    @pydantic.model_validator(mode='after')
    def check_taps(self) -> EncoderSpec:
        if not self.taps:
            raise ValueError('at least one layer tap is required')
        if list(self.taps) != sorted(set(self.taps)):
            raise ValueError(f'taps must be unique and increasing, got {self.taps}')
        n_layers = 1 if self.kind == EncoderKind.identity else len(self.layer_dims)
        if self.kind == EncoderKind.random_stack and not self.layer_dims:
            raise ValueError('random_stack encoder needs at least one layer')
        if any(dim <= 0 for dim in self.layer_dims):
            raise ValueError(f'layer dims must be positive, got {self.layer_dims}')
        if self.taps[0] < 0 or self.taps[-1] >= n_layers:
            raise ValueError(f'taps {self.taps} out of range for {n_layers} layer(s)')
        return self

    def tap_dims(self, input_dim: int | None = None) -> tuple[int, ...]:
        if self.kind == EncoderKind.identity:
            return (input_dim or self.frame_len,)
        return tuple(self.layer_dims[tap] for tap in self.taps)

    def to_text(self) -> str:
        """Serialize as plain ``key=value`` lines."""
        values = {
            'kind': self.kind.value,
            'layer_dims': ','.join(str(dim) for dim in self.layer_dims),
            'taps': ','.join(str(tap) for tap in self.taps),
            'seed': str(self.seed),
            'frame_len': str(self.frame_len),
            'frame_hop': str(self.frame_hop),
        }
        return ''.join(f'{key}={value}\n' for key, value in values.items())

    @classmethod
    def from_text(cls, text: str) -> EncoderSpec:
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            key, _, value = line.partition('=')
            values[key.strip()] = value.strip()
        return cls(**values)


class GeneratorConfig(pydantic.BaseModel):
    """Shape and paradigm of the one-step map f_theta."""

    model_config = pydantic.ConfigDict(frozen=True)

    paradigm: Paradigm = Paradigm.direct_mapping
    input_dim: int = pydantic.Field(default=512, gt=0)
    hidden_dims: tuple[int, ...] = (256, 256, 256)
    output_dim: int = pydantic.Field(default=512, gt=0)
    condition_dim: int = pydantic.Field(default=0, ge=0)
    activation: Activation = Activation.silu
    skip: bool | None = None
    zero_init_output: bool = True
    seed: int = 0

    @pydantic.field_validator('hidden_dims', mode='before')
    @classmethod
    def parse_hidden(cls, value):
        return _split_list(value)

    @pydantic.model_validator(mode='before')
    @classmethod
    def default_skip(cls, data):
        # the identity-at-init skip belongs to the direct paradigm only
        if isinstance(data, dict) and data.get('skip') is None:
            paradigm = data.get('paradigm', Paradigm.direct_mapping)
            data = {**data, 'skip': Paradigm(paradigm) == Paradigm.direct_mapping}
        return data

    @pydantic.model_validator(mode='after')
    def check_shapes(self) -> GeneratorConfig:
        if self.paradigm == Paradigm.direct_mapping:
            if self.condition_dim != 0:
                raise ValueError('direct mapping takes no condition')
            if self.skip and self.input_dim != self.output_dim:
                raise ValueError('skip connection needs input_dim == output_dim')
        elif self.skip:
            raise ValueError('the skip connection is only defined for direct mapping')
        return self


class StftConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    window_length: int = pydantic.Field(default=510, gt=1)
    hop_length: int = pydantic.Field(default=128, gt=0)
    fft_size: int = pydantic.Field(default=510, gt=1)
    sample_rate: int = pydantic.Field(default=16_000, gt=0)

    @pydantic.model_validator(mode='after')
    def check_geometry(self) -> StftConfig:
        if self.fft_size < self.window_length:
            raise ValueError('fft_size must be at least the window length')
        if self.hop_length > self.window_length:
            raise ValueError('hop_length larger than the window leaves gaps')
        return self

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


class CompressionConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    exponent: float = pydantic.Field(default=0.5, gt=0, le=1)
    factor: float = pydantic.Field(default=0.15, gt=0)


class TrainConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    batch_size: int = pydantic.Field(default=16, gt=0)
    lr: float = pydantic.Field(default=5e-4, gt=0)
    weight_decay: float = pydantic.Field(default=0.01, ge=0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = pydantic.Field(default=1e-8, gt=0)
    epochs: int = pydantic.Field(default=100, gt=0)
    kernel: KernelConfig = KernelConfig()
    taps: tuple[int, ...] = (0, 1, 2)
    paradigm: Paradigm = Paradigm.direct_mapping
    pairing: Pairing = Pairing.paired
    sigma_schedule: NoiseSchedule = NoiseSchedule()
    negative_scope: NegativeScope = NegativeScope.batch
    include_self: bool = True
    seed: int = 0

    @pydantic.field_validator('taps', 'betas', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)


class DataConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    n_train: int = pydantic.Field(default=64, gt=0)
    n_test: int = pydantic.Field(default=8, gt=0)
    n_pool: int = pydantic.Field(default=64, gt=0)
    utterance_length: int = pydantic.Field(default=8190, gt=0)
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    test_snr_db: float = 0.0
    clean_kinds: tuple[CleanKind, ...] = (CleanKind.harmonic,)
    noise_kinds: tuple[NoiseKind, ...] = (NoiseKind.lowpass, NoiseKind.bandpass)
    f0_range: tuple[float, float] = (80.0, 300.0)
    toy_target: typing.Literal['ring', 'gaussian'] = 'ring'
    toy_components: int = pydantic.Field(default=8, gt=0)
    toy_radius: float = pydantic.Field(default=4.0, ge=0)
    toy_std: float = pydantic.Field(default=0.2, gt=0)
    toy_eval_samples: int = pydantic.Field(default=512, gt=1)

    @pydantic.field_validator('snr_db', 'clean_kinds', 'noise_kinds', 'f0_range', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)

    @pydantic.model_validator(mode='after')
    def check_ranges(self) -> DataConfig:
        if not 0 < self.f0_range[0] < self.f0_range[1]:
            raise ValueError(f'invalid f0 range {self.f0_range}')
        if not self.snr_db or not self.clean_kinds or not self.noise_kinds:
            raise ValueError('snr_db, clean_kinds and noise_kinds must be non-empty')
        return self


class UnpairedConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    compare_paired: bool = True
    shift: bool = False
    shift_f0_range: tuple[float, float] = (400.0, 800.0)
    shift_kind: CleanKind = CleanKind.harmonic

    @pydantic.field_validator('shift_f0_range', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)


class MetricsConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    mmd_tau: float = pydantic.Field(default=0.5, gt=0)
    si_sdr_zero_mean: bool = False


class ExperimentConfig(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True)

    task: Task
    seed: int = pydantic.Field(ge=0, lt=2**64)
    output_dir: pathlib.Path = pathlib.Path('runs')
    steps: int = pydantic.Field(default=5000, gt=0)
    eval_every: int = pydantic.Field(default=1, gt=0)
    snapshot_epochs: tuple[int, ...] = (1, 10, 25, 100)
    train: TrainConfig = TrainConfig()
    encoder: EncoderSpec = EncoderSpec()
    generator: GeneratorConfig = GeneratorConfig()
    stft: StftConfig = StftConfig()
    compression: CompressionConfig = CompressionConfig()
    data: DataConfig = DataConfig()
    unpaired: UnpairedConfig = UnpairedConfig()
    metrics: MetricsConfig = MetricsConfig()
    perturb: bool = False

    @pydantic.field_validator('snapshot_epochs', mode='before')
    @classmethod
    def parse_lists(cls, value):
        return _split_list(value)

    @pydantic.model_validator(mode='after')
    def check_taps(self) -> ExperimentConfig:
        if self.task in (Task.denoise, Task.unpaired):
            missing = set(self.train.taps) - set(self.encoder.taps)
            if missing:
                raise ValueError(
                    f'train taps {self.train.taps} are not among the encoder taps '
                    f'{self.encoder.taps}'
                )
            if self.train.paradigm != self.generator.paradigm:
                raise ValueError('train.paradigm and generator.paradigm disagree')
        return self
