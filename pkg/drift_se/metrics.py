"""Evaluation: SI-SDR, kernel MMD, 2-component PCA and spectral statistics."""

from __future__ import annotations

import typing

import numpy as np
import pydantic
import scipy.fft
from scipy.spatial.distance import cdist

from .drift import Points, _as_points, _check_dims, _check_tau
from .exceptions import (
    DegenerateInputError,
    EmptyBatchError,
    NumericalError,
    ShapeMismatchError,
)
from .logging import get_logger
from .models import MetricReport, PCAProjection, Waveform, as_finite

logger = get_logger()

SI_SDR_CAP_DB = 100.0

Signal = typing.Union[Waveform, np.ndarray, typing.Sequence[float]]


def _samples(signal: Signal) -> np.ndarray:
    return signal.samples if isinstance(signal, Waveform) else as_finite(signal)


def si_sdr(estimate: Signal, reference: Signal, *, zero_mean: bool = False) -> float | np.ndarray:
    """Scale-invariant signal-to-distortion ratio in dB, capped at ``SI_SDR_CAP_DB``.

    Works on single signals or stacks of shape (..., L); with ``zero_mean`` both
    signals are mean-centered first.
    """
    estimate, reference = np.broadcast_arrays(_samples(estimate), _samples(reference))
    if zero_mean:
        estimate = estimate - estimate.mean(axis=-1, keepdims=True)
        reference = reference - reference.mean(axis=-1, keepdims=True)

    reference_energy = np.sum(reference**2, axis=-1, keepdims=True)
    if np.any(reference_energy == 0):
        raise DegenerateInputError('reference signal has zero energy')
    scaling = np.sum(reference * estimate, axis=-1, keepdims=True) / reference_energy
    projection = scaling * reference
    residual = estimate - projection

    target_energy = np.sum(projection**2, axis=-1)
    residual_energy = np.sum(residual**2, axis=-1)
    with np.errstate(divide='ignore'):
        value = 10 * np.log10(target_energy) - 10 * np.log10(residual_energy)
    value = np.nan_to_num(value, nan=-SI_SDR_CAP_DB, posinf=SI_SDR_CAP_DB, neginf=-SI_SDR_CAP_DB)
    value = np.minimum(value, SI_SDR_CAP_DB)
    return float(value) if value.ndim == 0 else value


def snr_db(clean: Signal, mixture: Signal) -> float:
    """Measured SNR of ``mixture`` against its clean component."""
    clean = _samples(clean)
    noise = _samples(mixture) - clean
    return float(10 * np.log10(np.dot(clean, clean) / np.dot(noise, noise)))


def _mean_kernel(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    return float(np.exp(-cdist(a, b) / tau).mean())


def mmd2(a: Points, b: Points, tau: float = 0.5) -> float:
    """Biased (V-statistic) squared MMD under ``exp(-||x - y|| / tau)``.

    The cross term is averaged over both argument orders so ``mmd2(a, b)`` and
    ``mmd2(b, a)`` agree bit for bit; ``mmd2(a, a)`` is exactly zero.
    """
    a = _as_points(a, 'first')
    b = _as_points(b, 'second')
    _check_dims(a, b)
    tau = _check_tau(tau)
    cross = 0.5 * (_mean_kernel(a, b, tau) + _mean_kernel(b, a, tau))
    return (_mean_kernel(a, a, tau) + _mean_kernel(b, b, tau)) - 2.0 * cross


def _top_eigenpair(
    covariance: np.ndarray,
    rng: np.random.Generator,
    *,
    orthogonal_to: np.ndarray | None = None,
    scale: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> tuple[float, np.ndarray, bool]:
    """Dominant eigenpair by power iteration, residual ``||C x - lambda x||`` as stop test."""
    dim = covariance.shape[0]

    def project(vector: np.ndarray) -> np.ndarray:
        if orthogonal_to is not None:
            vector = vector - (orthogonal_to @ vector) * orthogonal_to
        return vector

    vector = project(rng.standard_normal(dim))
    vector /= np.linalg.norm(vector)
    scale = max(float(np.trace(covariance)) if scale is None else scale, np.finfo(float).tiny)
    eigenvalue = 0.0
    for _ in range(max_iter):
        image = project(covariance @ vector)
        norm = np.linalg.norm(image)
        if norm <= tol * scale:
            # the remaining spectrum is numerically zero; any orthogonal unit vector will do
            return 0.0, vector, True
        eigenvalue = float(vector @ image)
        vector = image / norm
        residual = np.linalg.norm(project(covariance @ vector) - eigenvalue * vector)
        if residual < tol * scale:
            return float(vector @ covariance @ vector), vector, True
    return float(vector @ covariance @ vector), vector, False


def fit_pca2(points: Points, *, seed: int = 0, tol: float = 1e-10) -> PCAProjection:
    """Top-2 principal axes via power iteration with deflation."""
    points = _as_points(points, 'frames')
    if points.shape[0] < 3:
        raise EmptyBatchError(f'PCA needs at least 3 frames, got {points.shape[0]}')
    mean = points.mean(axis=0)
    centered = points - mean
    covariance = centered.T @ centered / (points.shape[0] - 1)
    if not np.any(covariance):
        raise DegenerateInputError('all frames are identical (rank-0 input)')
    if points.shape[1] == 1:
        raise ShapeMismatchError('PCA to 2 components needs at least 2 dimensions')

    rng = np.random.default_rng(seed)
    first_value, first, first_ok = _top_eigenpair(covariance, rng, tol=tol)
    scale = float(np.trace(covariance))
    deflated = covariance - first_value * np.outer(first, first)
    second_value, second, second_ok = _top_eigenpair(
        deflated, rng, orthogonal_to=first, scale=scale, tol=tol
    )
    second = second - (first @ second) * first
    second /= np.linalg.norm(second)
    if not (first_ok and second_ok):
        logger.debug('🔬 Power iteration hit the iteration cap before the residual tolerance')
    return PCAProjection(
        mean=mean,
        components=np.stack([first, second]),
        eigenvalues=np.array([first_value, max(second_value, 0.0)]),
        converged=first_ok and second_ok,
    )


class Projected(typing.NamedTuple):
    points: np.ndarray
    centroid: np.ndarray
    centroid_original: np.ndarray
    projection: PCAProjection


def pca2_project(frames: Points, projection: PCAProjection | None = None) -> Projected:
    """Project frames onto two principal axes (fitted on ``frames`` unless given)."""
    frames = _as_points(frames, 'frames')
    projection = projection or fit_pca2(frames)
    projected = projection.transform(frames)
    return Projected(
        points=projected,
        centroid=projected.mean(axis=0),
        centroid_original=frames.mean(axis=0),
        projection=projection,
    )


def project_groups(groups: dict[str, Points]) -> dict[str, Projected]:
    """Fit one PCA on the union of all groups and project each group onto it."""
    arrays = {name: _as_points(points, name) for name, points in groups.items()}
    projection = fit_pca2(np.concatenate(list(arrays.values())))
    return {name: pca2_project(points, projection) for name, points in arrays.items()}


def centroid_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def spectral_centroid(signal: Signal, sample_rate: int | None = None) -> float:
    """Magnitude-weighted mean frequency in Hz over the whole signal."""
    if sample_rate is None:
        sample_rate = signal.sample_rate if isinstance(signal, Waveform) else 16_000
    samples = _samples(signal)
    magnitude = np.abs(scipy.fft.rfft(samples))
    total = magnitude.sum()
    if total == 0:
        raise DegenerateInputError('spectral centroid of a silent signal is undefined')
    frequencies = scipy.fft.rfftfreq(samples.shape[-1], d=1.0 / sample_rate)
    return float(frequencies @ magnitude / total)


def density_grid(
    points: np.ndarray,
    *,
    bins: int = 64,
    bounds: tuple[tuple[float, float], tuple[float, float]] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2-D normalized histogram of projected points: (density, x_edges, y_edges)."""
    points = as_finite(points, ndim=2)
    if points.shape[1] != 2:
        raise ShapeMismatchError(f'density grids need 2-D points, got shape {points.shape}')
    density, x_edges, y_edges = np.histogram2d(
        points[:, 0], points[:, 1], bins=bins, range=bounds, density=True
    )
    return density, x_edges, y_edges


def metric_report(**values: typing.Any) -> MetricReport:
    """Validated evaluation report; a negative or non-finite MMD² is a numerical failure."""
    try:
        return MetricReport(**values)
    except pydantic.ValidationError as error:
        raise NumericalError(f'invalid evaluation metrics: {error}') from error
