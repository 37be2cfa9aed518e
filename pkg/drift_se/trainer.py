"""Equilibrium training: drift targets in the frozen latent space and the drift loss.

A step generates once, maps the generator output into latent frames through a
:class:`Pipeline`, builds positive/negative sets, computes the multi-temperature
drift for every generated frame, and regresses the frames onto the stop-gradient
targets ``phi + V``. Gradients run back through the pipeline (encoder, iSTFT,
decompression) into the generator; the drift field itself is a constant.
"""

from __future__ import annotations

import dataclasses
import pathlib
import typing

import numpy as np
import pydantic
import ujson

from .data import Batch
from .drift import drift_multi_temperature
from .encoder import EncoderCache, get_encoder
from .exceptions import (
    ConfigError,
    EmptyBatchError,
    NonFiniteError,
    NumericalError,
    ShapeMismatchError,
)
from .generator import (
    Generator,
    draw_sigmas,
    forward_conditional,
    forward_direct,
    load_checkpoint,
    save_checkpoint,
)
from .logging import get_logger
from .models import DriftField, DriftTarget, LatentStack
from .optim import AdamState, adamw_update
from .schemas import (
    CompressionConfig,
    EncoderSpec,
    NegativeScope,
    Paradigm,
    StftConfig,
    TrainConfig,
)
from .signal import (
    compress_array,
    decompress_adjoint,
    decompress_array,
    istft_adjoint,
    istft_frames,
    stft_frames,
    valid_region,
)

logger = get_logger()

Layers = tuple[np.ndarray, ...]


class Pipeline(typing.Protocol):
    """Maps generator outputs to latent frames of shape (B, T', D) per layer."""

    def features(self, noisy: np.ndarray | None) -> np.ndarray | None: ...

    def forward(self, outputs: np.ndarray) -> tuple[Layers, typing.Any]: ...

    def backward(self, cache: typing.Any, upstream: Layers) -> np.ndarray: ...

    def encode_targets(self, targets: np.ndarray) -> Layers: ...


class PointPipeline:
    """Generated points are their own latents: one layer, one frame per item."""

    def features(self, noisy):
        return None

    def forward(self, outputs: np.ndarray) -> tuple[Layers, None]:
        return (outputs[:, np.newaxis, :],), None

    def backward(self, cache, upstream: Layers) -> np.ndarray:
        return upstream[0][:, 0, :]

    def encode_targets(self, targets: np.ndarray) -> Layers:
        return (np.asarray(targets, dtype=np.float64)[:, np.newaxis, :],)


class SpeechCache(typing.NamedTuple):
    compressed: np.ndarray
    encoder: EncoderCache
    length: int


class SpeechPipeline:
    """Compressed STFT frames -> waveform (iSTFT) -> frozen encoder layers.

    Generator inputs and outputs are per-frame vectors ``[Re X' || Im X']`` of
    length 2F, laid out as (B, T, 2F).
    """

    def __init__(
        self,
        stft_cfg: StftConfig,
        compression: CompressionConfig,
        encoder: EncoderSpec,
        taps: typing.Sequence[int] | None = None,
    ):
        self.stft_cfg = stft_cfg
        self.compression = compression
        if taps is not None and tuple(taps) != encoder.taps:
            encoder = encoder.model_copy(update={'taps': tuple(taps)})
        self.encoder_spec = encoder
        self.encoder = get_encoder(encoder)

    @property
    def frame_dim(self) -> int:
        return 2 * self.stft_cfg.n_bins

    def features(self, noisy: np.ndarray | None) -> np.ndarray:
        spectrum = compress_array(stft_frames(noisy, self.stft_cfg), self.compression)
        return self.to_frames(spectrum)

    def to_frames(self, spectrum: np.ndarray) -> np.ndarray:
        frames = np.swapaxes(spectrum, -1, -2)
        return np.concatenate([frames.real, frames.imag], axis=-1)

    def to_spectrum(self, frames: np.ndarray) -> np.ndarray:
        if frames.shape[-1] != self.frame_dim:
            raise ShapeMismatchError(f'frames of dim {frames.shape[-1]}, expected {self.frame_dim}')
        bins = self.stft_cfg.n_bins
        return np.swapaxes(frames[..., :bins] + 1j * frames[..., bins:], -1, -2)

    def synthesize(self, outputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        compressed = self.to_spectrum(outputs)
        samples = istft_frames(decompress_array(compressed, self.compression), self.stft_cfg)
        return samples, compressed

    def forward(self, outputs: np.ndarray) -> tuple[Layers, SpeechCache]:
        samples, compressed = self.synthesize(outputs)
        stack, cache = self.encoder.forward(self.crop(samples))
        return stack.layers, SpeechCache(compressed, cache, samples.shape[-1])

    def backward(self, cache: SpeechCache, upstream: Layers) -> np.ndarray:
        grad_valid = self.encoder.backward(cache.encoder, upstream)
        grad_samples = np.zeros(grad_valid.shape[:-1] + (cache.length,))
        grad_samples[..., valid_region(cache.length, self.stft_cfg)] = grad_valid
        grad_spectrum = istft_adjoint(grad_samples, self.stft_cfg)
        grad_compressed = decompress_adjoint(cache.compressed, grad_spectrum, self.compression)
        return self.to_frames(grad_compressed)

    def crop(self, samples: np.ndarray) -> np.ndarray:
        """Keep the fully overlapped part of waveforms of any length; the edges are dropped."""
        return samples[..., valid_region(samples.shape[-1], self.stft_cfg)]

    def encode(self, samples: np.ndarray) -> Layers:
        """Latent layers of already cropped waveforms."""
        stack, _ = self.encoder.forward(samples)
        dims = tuple(layer.shape[-1] for layer in stack.layers)
        if dims != self.latent_dims:
            raise ShapeMismatchError(
                f'encoder produced layer dims {dims}, expected {self.latent_dims}'
            )
        return stack.layers

    def encode_targets(self, targets: np.ndarray) -> Layers:
        return self.encode(self.crop(targets))

    @property
    def latent_dims(self) -> tuple[int, ...]:
        return self.encoder_spec.tap_dims(self.encoder_spec.frame_len)

    def valid_length(self, length: int) -> int:
        region = valid_region(length, self.stft_cfg)
        return region.stop - region.start


def speech_pipeline(
    stft_cfg: StftConfig,
    compression: CompressionConfig,
    encoder: EncoderSpec,
    train: TrainConfig,
    *,
    input_dim: int,
) -> SpeechPipeline:
    pipeline = SpeechPipeline(stft_cfg, compression, encoder, taps=train.taps)
    if input_dim != pipeline.frame_dim:
        raise ConfigError(
            f'generator input_dim {input_dim} does not match 2 x {stft_cfg.n_bins} STFT bins'
        )
    return pipeline


def _flatten(layer: np.ndarray) -> np.ndarray:
    return layer.reshape(-1, layer.shape[-1])


def build_sets(clean_layers: Layers, generated_layers: Layers) -> tuple[Layers, Layers]:
    """Positive and negative sets: all clean and all generated frames of the batch, per layer."""
    if len(clean_layers) != len(generated_layers):
        raise ShapeMismatchError('clean and generated latents have different layer counts')
    positives, negatives = [], []
    for clean, generated in zip(clean_layers, generated_layers):
        if clean.shape[-1] != generated.shape[-1]:
            raise ShapeMismatchError(
                f'layer dims differ: {clean.shape[-1]} vs {generated.shape[-1]}'
            )
        if clean.size == 0 or generated.size == 0:
            raise EmptyBatchError('positive or negative set is empty')
        positives.append(_flatten(clean))
        negatives.append(_flatten(generated))
    return tuple(positives), tuple(negatives)


def drift_targets(
    generated_layers: Layers, clean_layers: Layers, cfg: TrainConfig
) -> tuple[DriftTarget, tuple[DriftField, ...]]:
    """``sg(phi + V(phi))`` for every generated frame of every layer."""
    positives, negatives = build_sets(clean_layers, generated_layers)
    targets, fields = [], []
    for generated, positive, negative in zip(generated_layers, positives, negatives):
        if cfg.negative_scope == NegativeScope.batch:
            field = drift_multi_temperature(
                negative, positive, negative, cfg.kernel, include_self=cfg.include_self
            )
            vectors = field.vectors
        else:
            per_item = [
                drift_multi_temperature(
                    frames, positive, frames, cfg.kernel, include_self=cfg.include_self
                )
                for frames in generated
            ]
            vectors = np.concatenate([item.vectors for item in per_item])
            field = DriftField(
                vectors=vectors,
                temperatures=cfg.kernel.temperatures,
                per_temperature=np.concatenate([item.per_temperature for item in per_item], axis=1),
                normalizers=np.concatenate([item.normalizers for item in per_item], axis=1),
                log_normalizers=np.concatenate([item.log_normalizers for item in per_item], axis=1),
            )
        targets.append((negative + vectors).reshape(generated.shape))
        fields.append(field)
    return DriftTarget(layers=targets), tuple(fields)


def drift_loss(generated: LatentStack | Layers, targets: DriftTarget) -> tuple[float, Layers]:
    """Mean over layers of the mean squared frame distance to the targets.

    Returns the loss and its cotangent with respect to every generated layer,
    ``2 (phi_l - target_l) / (n_frames_l * n_layers)``.
    """
    layers = generated.layers if isinstance(generated, LatentStack) else tuple(generated)
    if len(layers) != len(targets.layers):
        raise ShapeMismatchError('one target per generated layer is required')
    n_layers = len(layers)
    loss, cotangents = 0.0, []
    for layer, target in zip(layers, targets.layers):
        if layer.shape != target.shape:
            raise ShapeMismatchError(f'latent shape {layer.shape} != target shape {target.shape}')
        residual = layer - target
        n_frames = int(np.prod(layer.shape[:-1]))
        loss += float(np.sum(residual**2)) / n_frames
        cotangents.append(2.0 * residual / (n_frames * n_layers))
    return loss / n_layers, tuple(cotangents)


class StepMetrics(pydantic.BaseModel):
    step: int
    loss: float
    mean_drift_norm: tuple[float, ...]
    sigma_mean: float | None = None


@dataclasses.dataclass
class TrainState:
    generator: Generator
    optimizer: AdamState = dataclasses.field(default_factory=AdamState)
    step: int = 0
    epoch: int = 0


def generate(
    generator: Generator,
    features: np.ndarray | None,
    rng: np.random.Generator,
    cfg: TrainConfig,
    *,
    batch_size: int,
    sigmas: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """One generator evaluation per item: ``f(y + sigma eps)`` or ``f(eps, y)``."""
    if generator.paradigm == Paradigm.direct_mapping:
        if features is None:
            raise ConfigError('direct mapping needs noisy inputs')
        if sigmas is None:
            sigmas, _ = draw_sigmas(cfg.sigma_schedule, rng, features.shape[0])
        epsilon = rng.standard_normal(features.shape)
        return forward_direct(features, sigmas, epsilon, generator), sigmas

    leading = features.shape[:-1] if features is not None else (batch_size,)
    epsilon = rng.standard_normal(leading + (generator.config.input_dim,))
    condition = features if generator.config.condition_dim else None
    return forward_conditional(epsilon, condition, generator), None


def _dump_nan(out_dir: pathlib.Path | None, diagnostics: dict[str, typing.Any]) -> str | None:
    if out_dir is None:
        return None
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / 'nan_dump.json'
    path.write_text(ujson.dumps(diagnostics, indent=2, sort_keys=True))
    return str(path)


def _abort(
    state: TrainState,
    batch: Batch,
    out_dir: pathlib.Path | None,
    *,
    reason: str,
    sigmas: np.ndarray | None = None,
    drift_norms: typing.Sequence[float] = (),
) -> typing.NoReturn:
    diagnostics = {
        'step': state.step,
        'reason': reason,
        'indices': np.asarray(batch.indices).tolist(),
        'target_indices': np.asarray(batch.target_indices).tolist(),
        'sigmas': None if sigmas is None else np.asarray(sigmas).tolist(),
        'drift_norms': list(drift_norms),
    }
    path = _dump_nan(out_dir, diagnostics)
    logger.error(f'❌ Non-finite values at step {state.step:,}: {reason}; diagnostics in {path}')
    raise NumericalError(f'non-finite loss at step {state.step}: {reason}', diagnostics)


def train_step(
    state: TrainState,
    batch: Batch,
    pipeline: Pipeline,
    cfg: TrainConfig,
    rng: np.random.Generator,
    *,
    out_dir: pathlib.Path | None = None,
) -> StepMetrics:
    """Generate, drift, regress and apply one AdamW update to ``state`` in place."""
    generator = state.generator
    sigmas = None
    try:
        features = pipeline.features(batch.noisy)
        outputs, sigmas = generate(
            generator, features, rng, cfg, batch_size=batch.targets.shape[0]
        )
        generated, cache = pipeline.forward(outputs)
        clean = pipeline.encode_targets(batch.targets)
        targets, fields = drift_targets(generated, clean, cfg)
    except (NonFiniteError, pydantic.ValidationError) as error:
        _abort(state, batch, out_dir, reason=str(error), sigmas=sigmas)

    loss, cotangents = drift_loss(generated, targets)
    drift_norms = tuple(float(field.norms.mean()) for field in fields)
    if not np.isfinite(loss):
        _abort(
            state, batch, out_dir, reason=f'loss={loss!r}', sigmas=sigmas, drift_norms=drift_norms
        )

    grads = generator.backward(pipeline.backward(cache, cotangents))
    generator.params, state.optimizer = adamw_update(
        generator.params,
        grads,
        state.optimizer,
        cfg.lr,
        cfg.weight_decay,
        betas=cfg.betas,
        eps=cfg.eps,
    )
    state.step += 1
    return StepMetrics(
        step=state.step,
        loss=loss,
        mean_drift_norm=drift_norms,
        sigma_mean=None if sigmas is None else float(np.mean(sigmas)),
    )


def enhance(
    generator: Generator,
    noisy: np.ndarray,
    pipeline: SpeechPipeline,
    *,
    rng: np.random.Generator | None = None,
    sigma: float = 0.0,
) -> np.ndarray:
    """Enhanced waveforms from a single generator evaluation.

    Direct mapping uses ``sigma`` (0 gives deterministic output); the conditional
    paradigm draws a fresh epsilon from ``rng`` on every call. Only the fully
    overlapped samples are returned, see :meth:`SpeechPipeline.crop`.
    """
    noisy = np.atleast_2d(noisy)
    features = pipeline.features(noisy)
    if generator.paradigm == Paradigm.direct_mapping:
        if sigma == 0:
            epsilon = np.zeros_like(features)
        elif rng is None:
            raise ConfigError(f'direct mapping with sigma={sigma} needs an rng for epsilon')
        else:
            epsilon = rng.standard_normal(features.shape)
        outputs = forward_direct(features, sigma, epsilon, generator)
    else:
        if rng is None:
            raise ConfigError('conditional inference needs an rng for epsilon')
        epsilon = rng.standard_normal(features.shape[:-1] + (generator.config.input_dim,))
        condition = features if generator.config.condition_dim else None
        outputs = forward_conditional(epsilon, condition, generator)
    samples, _ = pipeline.synthesize(outputs)
    return pipeline.crop(samples)


def _rng_meta(rng: np.random.Generator) -> dict[str, typing.Any]:
    # PCG64 state words are 128-bit and do not fit a JSON number
    state = rng.bit_generator.state
    return {
        'bit_generator': state['bit_generator'],
        'state': str(state['state']['state']),
        'inc': str(state['state']['inc']),
        'has_uint32': state['has_uint32'],
        'uinteger': state['uinteger'],
    }


def _restore_rng(meta: dict[str, typing.Any]) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        'bit_generator': meta['bit_generator'],
        'state': {'state': int(meta['state']), 'inc': int(meta['inc'])},
        'has_uint32': meta['has_uint32'],
        'uinteger': meta['uinteger'],
    }
    return rng


class Trainer:
    """Owns the generator, optimizer state and the single RNG stream of a run."""

    def __init__(
        self,
        generator: Generator,
        pipeline: Pipeline,
        cfg: TrainConfig,
        *,
        out_dir: pathlib.Path | None = None,
        state: TrainState | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.pipeline = pipeline
        self.cfg = cfg
        self.out_dir = out_dir
        self.state = state or TrainState(generator=generator)
        self.rng = rng or np.random.default_rng(cfg.seed)
        self.rows: list[dict[str, typing.Any]] = []

    @property
    def generator(self) -> Generator:
        return self.state.generator

    def step(self, batch: Batch) -> StepMetrics:
        metrics = train_step(
            self.state, batch, self.pipeline, self.cfg, self.rng, out_dir=self.out_dir
        )
        row = {'step': metrics.step, 'epoch': self.state.epoch, 'loss': metrics.loss}
        for index, value in enumerate(metrics.mean_drift_norm):
            row[f'mean_drift_norm_{index}'] = value
        row['sigma_mean'] = np.nan if metrics.sigma_mean is None else metrics.sigma_mean
        row['mmd'] = np.nan
        self.rows.append(row)
        return metrics

    def run_epoch(self, batches: typing.Iterable[Batch]) -> list[StepMetrics]:
        self.state.epoch += 1
        return [self.step(batch) for batch in batches]

    def record(self, **values: float) -> None:
        """Attach periodic evaluation values to the latest step row."""
        if self.rows:
            self.rows[-1].update(values)

    def save(self, path: str | pathlib.Path) -> pathlib.Path:
        meta = {
            'step': self.state.step,
            'epoch': self.state.epoch,
            'adam_step': self.state.optimizer.step,
            'rng': _rng_meta(self.rng),
        }
        return save_checkpoint(
            path, self.generator, extra=self.state.optimizer.to_arrays(), meta=meta
        )

    @classmethod
    def resume(
        cls,
        path: str | pathlib.Path,
        pipeline: Pipeline,
        cfg: TrainConfig,
        *,
        out_dir: pathlib.Path | None = None,
    ) -> Trainer:
        generator, extra, meta = load_checkpoint(path)
        state = TrainState(
            generator=generator,
            optimizer=AdamState.from_arrays(meta.get('adam_step', 0), extra),
            step=meta.get('step', 0),
            epoch=meta.get('epoch', 0),
        )
        rng = _restore_rng(meta['rng']) if 'rng' in meta else None
        logger.info(f'🔁 Resuming from {path} at step {state.step:,} (epoch {state.epoch})')
        return cls(generator, pipeline, cfg, out_dir=out_dir, state=state, rng=rng)
