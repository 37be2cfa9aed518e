"""Array-carrying domain types shared across modules."""

from __future__ import annotations

import typing

import numpy as np
import pydantic

from .exceptions import NonFiniteError, ShapeMismatchError


def as_finite(value: typing.Any, *, ndim: int | None = None, dtype=np.float64) -> np.ndarray:
    array = np.asarray(value, dtype=dtype)
    if ndim is not None and array.ndim != ndim:
        raise ShapeMismatchError(f'expected a {ndim}-d array, got shape {array.shape}')
    if not np.all(np.isfinite(array)):
        raise NonFiniteError('array contains NaN or Inf entries')
    return array


class ArrayModel(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(arbitrary_types_allowed=True, frozen=True)


class LatentBatch(ArrayModel):
    """A set of d-dimensional latent points drawn from one distribution."""

    points: np.ndarray
    role: typing.Literal['positive', 'negative', 'query'] = 'negative'

    @pydantic.field_validator('points', mode='before')
    @classmethod
    def check_points(cls, value):
        array = as_finite(value)
        if array.ndim == 1:
            array = array[np.newaxis, :]
        if array.ndim != 2 or array.shape[1] < 1:
            raise ShapeMismatchError(f'points must be (n, d) with d >= 1, got {array.shape}')
        return array

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


class DriftField(ArrayModel):
    """Per-query drift vectors plus per-temperature diagnostics.

    ``per_temperature`` has shape (K, Q, d), ``normalizers`` and ``log_normalizers``
    have shape (K, Q, 2) holding (Z_p, Z_q) per temperature and query.
    """

    vectors: np.ndarray
    temperatures: tuple[float, ...]
    per_temperature: np.ndarray | None = None
    normalizers: np.ndarray
    log_normalizers: np.ndarray

    @pydantic.model_validator(mode='after')
    def check_consistency(self) -> DriftField:
        if not np.all(np.isfinite(self.vectors)):
            raise NonFiniteError('drift field contains non-finite vectors')
        components = self.per_temperature
        if components is not None and components.shape[1:] != self.vectors.shape:
            raise ShapeMismatchError('per-temperature components do not match the field shape')
        return self

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


class Waveform(ArrayModel):
    samples: np.ndarray
    sample_rate: int = pydantic.Field(default=16_000, gt=0)

    @pydantic.field_validator('samples', mode='before')
    @classmethod
    def check_samples(cls, value):
        return as_finite(value, ndim=1)

    @property
    def length(self) -> int:
        return self.samples.shape[0]


class SpectralFrameGrid(ArrayModel):
    """Complex F x T spectrogram with the geometry needed to invert it."""

    coefficients: np.ndarray
    window_length: int = 510
    hop_length: int = 128
    fft_size: int = 510
    sample_rate: int = 16_000
    compressed: bool = False

    @pydantic.field_validator('coefficients', mode='before')
    @classmethod
    def check_coefficients(cls, value):
        return as_finite(value, ndim=2, dtype=np.complex128)

    @pydantic.model_validator(mode='after')
    def check_bins(self) -> SpectralFrameGrid:
        if self.coefficients.shape[0] != self.fft_size // 2 + 1:
            raise ShapeMismatchError(
                f'{self.coefficients.shape[0]} bins do not match fft_size {self.fft_size}'
            )
        return self

    @property
    def n_bins(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[1]


class LatentStack(ArrayModel):
    """Tapped encoder layers; each entry has shape (..., T', D_layer)."""

    layers: tuple[np.ndarray, ...]
    taps: tuple[int, ...]

    @pydantic.model_validator(mode='after')
    def check_layers(self) -> LatentStack:
        if len(self.layers) != len(self.taps):
            raise ShapeMismatchError('one latent array per tap is required')
        frames = {layer.shape[-2] for layer in self.layers}
        if len(frames) != 1:
            raise ShapeMismatchError(f'layers disagree on frame count: {sorted(frames)}')
        return self

    @property
    def frame_count(self) -> int:
        return self.layers[0].shape[-2]


class DriftTarget(ArrayModel):
    """Stop-gradient regression targets phi(x) + V(phi(x)), one array per layer."""

    layers: tuple[np.ndarray, ...]

    @pydantic.field_validator('layers', mode='before')
    @classmethod
    def freeze_layers(cls, value):
        frozen = []
        for layer in value:
            array = as_finite(layer).copy()
            array.setflags(write=False)
            frozen.append(array)
        return tuple(frozen)


class PCAProjection(ArrayModel):
    """Top-2 principal axes of a frame set."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    converged: bool = True

    def transform(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.shape[-1] != self.mean.shape[0]:
            raise ShapeMismatchError(
                f'points of dim {points.shape[-1]} do not match projection dim {self.mean.shape[0]}'
            )
        return (points - self.mean) @ self.components.T


class MetricReport(pydantic.BaseModel):
    si_sdr_db: float | None = None
    mmd2: float | None = None
    mean_drift_norm: tuple[float, ...] = ()
    centroid_distance: float | None = None

    @pydantic.field_validator('mmd2')
    @classmethod
    def check_mmd(cls, value: float | None) -> float | None:
        if value is not None and (value < -1e-12 or not np.isfinite(value)):
            raise ValueError(f'mmd2 must be non-negative and finite, got {value}')
        return value
