"""Acoustic pipeline: STFT/iSTFT, spectral compression, synthetic signals and SNR mixing.

The transforms work on stacked arrays (``(..., L)`` waveforms and ``(..., F, T)``
spectrograms) so the trainer can push a whole batch through them; the
:class:`~drift_se.models.Waveform` / :class:`~drift_se.models.SpectralFrameGrid`
wrappers sit on top.
"""

from __future__ import annotations

import functools
import pathlib

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

from .exceptions import NumericalError, ShapeMismatchError, SignalTooShortError
from .logging import get_logger
from .models import SpectralFrameGrid, Waveform, as_finite
from .schemas import CleanKind, CompressionConfig, NoiseKind, StftConfig

logger = get_logger()

TARGET_RMS = 0.1
PCM_SCALE = 32768.0


@functools.lru_cache(maxsize=8)
def analysis_window(window_length: int) -> np.ndarray:
    """Periodic Hann window."""
    window = scipy.signal.get_window('hann', window_length, fftbins=True)
    window.setflags(write=False)
    return window


def n_frames(length: int, cfg: StftConfig) -> int:
    if length < cfg.window_length:
        return 0
    return (length - cfg.window_length) // cfg.hop_length + 1


def frame_aligned_length(length: int, cfg: StftConfig) -> int:
    """Length of the signal that the STFT frames of a ``length``-sample input cover."""
    count = n_frames(length, cfg)
    if count == 0:
        raise SignalTooShortError(
            f'{length} samples is shorter than the {cfg.window_length} window'
        )
    return (count - 1) * cfg.hop_length + cfg.window_length


def edge_margin(cfg: StftConfig) -> int:
    """Samples at each end of an iSTFT output covered by fewer frames than the interior."""
    return cfg.window_length - cfg.hop_length


def valid_region(length: int, cfg: StftConfig) -> slice:
    """Samples of a frame-aligned signal where the summed squared window is at its interior level.

    Outside this slice the overlap-add normalizer approaches ``1 / w^2`` and amplifies any
    frame that is not an exact STFT by orders of magnitude.
    """
    aligned = frame_aligned_length(length, cfg)
    margin = edge_margin(cfg)
    if aligned <= 2 * margin:
        raise SignalTooShortError(
            f'{length} samples leave no fully overlapped region after a {margin}-sample margin'
        )
    return slice(margin, aligned - margin)


def stft_frames(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """(..., L) real samples -> (..., F, T) complex coefficients, no centering or padding."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-1] < cfg.window_length:
        raise SignalTooShortError(
            f'{samples.shape[-1]} samples is shorter than the {cfg.window_length} window'
        )
    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_length, axis=-1)
    frames = frames[..., :: cfg.hop_length, :] * analysis_window(cfg.window_length)
    coefficients = scipy.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return np.swapaxes(coefficients, -1, -2)


def _overlap_add(frames: np.ndarray, cfg: StftConfig) -> np.ndarray:
    count = frames.shape[-2]
    length = (count - 1) * cfg.hop_length + cfg.window_length
    out = np.zeros(frames.shape[:-2] + (length,))
    for index in range(count):
        start = index * cfg.hop_length
        out[..., start : start + cfg.window_length] += frames[..., index, :]
    return out


@functools.lru_cache(maxsize=32)
def _window_normalizer(count: int, cfg: StftConfig) -> np.ndarray:
    """Inverse of the summed squared window, zero where no window reaches."""
    window = analysis_window(cfg.window_length)
    summed = _overlap_add(np.broadcast_to(window**2, (count, cfg.window_length)), cfg)
    interior = summed[cfg.window_length : -cfg.window_length]
    if interior.size and np.any(interior <= 0):
        raise NumericalError(
            'window normalizer vanishes inside the signal', {'hop': cfg.hop_length}
        )
    inverse = np.zeros_like(summed)
    np.divide(1.0, summed, out=inverse, where=summed > 1e-12)
    inverse.setflags(write=False)
    return inverse


def istft_frames(coefficients: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft_frames` (squared-window normalized)."""
    coefficients = np.asarray(coefficients)
    if coefficients.shape[-2] != cfg.n_bins:
        raise ShapeMismatchError(f'{coefficients.shape[-2]} bins, expected {cfg.n_bins}')
    frames = scipy.fft.irfft(np.swapaxes(coefficients, -1, -2), n=cfg.fft_size, axis=-1)
    frames = frames[..., : cfg.window_length] * analysis_window(cfg.window_length)
    return _overlap_add(frames, cfg) * _window_normalizer(coefficients.shape[-1], cfg)


def istft_adjoint(grad_samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Pull a waveform cotangent back onto the coefficients (``dRe + i dIm``)."""
    grad_samples = np.asarray(grad_samples, dtype=np.float64)
    count = n_frames(grad_samples.shape[-1], cfg)
    scaled = grad_samples * _window_normalizer(count, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(scaled, cfg.window_length, axis=-1)
    frames = frames[..., :: cfg.hop_length, :] * analysis_window(cfg.window_length)
    spectrum = scipy.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    # irfft counts every bin twice except DC and (even sizes) Nyquist
    weights = np.full(cfg.n_bins, 2.0)
    weights[0] = 1.0
    if cfg.fft_size % 2 == 0:
        weights[-1] = 1.0
    return np.swapaxes(spectrum * (weights / cfg.fft_size), -1, -2)


def stft(waveform: Waveform, cfg: StftConfig | None = None) -> SpectralFrameGrid:
    cfg = cfg or StftConfig(sample_rate=waveform.sample_rate)
    return SpectralFrameGrid(
        coefficients=stft_frames(waveform.samples, cfg),
        window_length=cfg.window_length,
        hop_length=cfg.hop_length,
        fft_size=cfg.fft_size,
        sample_rate=waveform.sample_rate,
    )


def grid_config(grid: SpectralFrameGrid) -> StftConfig:
    return StftConfig(
        window_length=grid.window_length,
        hop_length=grid.hop_length,
        fft_size=grid.fft_size,
        sample_rate=grid.sample_rate,
    )


def istft(grid: SpectralFrameGrid) -> Waveform:
    samples = istft_frames(grid.coefficients, grid_config(grid))
    return Waveform(samples=samples, sample_rate=grid.sample_rate)


def compress_array(coefficients: np.ndarray, cfg: CompressionConfig) -> np.ndarray:
    """``c |X|^a exp(i angle X)``."""
    return cfg.factor * np.abs(coefficients) ** cfg.exponent * np.exp(1j * np.angle(coefficients))


def decompress_array(coefficients: np.ndarray, cfg: CompressionConfig) -> np.ndarray:
    """``(|X'| / c)^(1/a) exp(i angle X')``, the exact inverse of :func:`compress_array`."""
    magnitude = (np.abs(coefficients) / cfg.factor) ** (1.0 / cfg.exponent)
    return magnitude * np.exp(1j * np.angle(coefficients))


def decompress_adjoint(
    coefficients: np.ndarray, grad: np.ndarray, cfg: CompressionConfig
) -> np.ndarray:
    """Cotangent of :func:`decompress_array` at ``coefficients`` (complex ``dRe + i dIm``).

    Writing the map as ``s(r) z`` with ``r = |z|`` and ``s(r) = r^(p-1) / c^p``
    (``p = 1/a``), the pullback is ``s G + (p - 1) r^(p-1) / c^p Re(conj(u) G) u``.
    """
    power = 1.0 / cfg.exponent
    radius = np.abs(coefficients)
    unit = np.zeros_like(coefficients)
    np.divide(coefficients, radius, out=unit, where=radius > 0)
    scale = radius ** (power - 1.0) / cfg.factor**power
    radial = np.real(np.conj(unit) * grad)
    return scale * grad + (power - 1.0) * scale * radial * unit


def compress(grid: SpectralFrameGrid, cfg: CompressionConfig | None = None) -> SpectralFrameGrid:
    cfg = cfg or CompressionConfig()
    return grid.model_copy(
        update={'coefficients': compress_array(grid.coefficients, cfg), 'compressed': True}
    )


def decompress(grid: SpectralFrameGrid, cfg: CompressionConfig | None = None) -> SpectralFrameGrid:
    cfg = cfg or CompressionConfig()
    return grid.model_copy(
        update={'coefficients': decompress_array(grid.coefficients, cfg), 'compressed': False}
    )


def energy(samples: np.ndarray) -> float:
    return float(np.dot(samples, samples))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """``clean + alpha * noise`` with alpha set so that the mixture has SNR ``snr_db``."""
    if clean.length != noise.length:
        raise ShapeMismatchError(f'clean has {clean.length} samples, noise {noise.length}')
    clean_energy = energy(clean.samples)
    noise_energy = energy(noise.samples)
    if clean_energy == 0:
        raise ValueError('clean signal has zero energy')
    if noise_energy == 0:
        raise ValueError('noise has zero energy')
    alpha = np.sqrt(clean_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))
    return Waveform(samples=clean.samples + alpha * noise.samples, sample_rate=clean.sample_rate)


def normalize_rms(samples: np.ndarray, target: float = TARGET_RMS) -> np.ndarray:
    rms = np.sqrt(np.mean(samples**2))
    return samples * (target / rms) if rms > 0 else samples


def synth_clean(
    seed: int,
    length: int,
    kind: CleanKind | str = CleanKind.harmonic,
    *,
    sample_rate: int = 16_000,
    f0_range: tuple[float, float] = (80.0, 300.0),
) -> Waveform:
    """Deterministic speech-like stand-in signal, RMS normalized to 0.1.

    ``harmonic``: 3-6 harmonics of a slowly drifting fundamental under a syllabic
    amplitude envelope. ``am-chirp``: an amplitude-modulated linear chirp with two
    overtones, giving the clean distribution a second family.
    """
    if length <= 0:
        raise ValueError('length must be positive')
    kind = CleanKind(kind)
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sample_rate
    lo, hi = f0_range

    if kind == CleanKind.harmonic:
        base = rng.uniform(lo, hi)
        depth = rng.uniform(0.03, 0.12)
        rate = rng.uniform(0.5, 3.0)
        wobble = depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        f0 = np.clip(base * (1.0 + wobble), lo, hi)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        n_harmonics = int(rng.integers(3, 7))
        samples = np.zeros(length)
        for harmonic in range(1, n_harmonics + 1):
            amplitude = rng.uniform(0.5, 1.0) / harmonic
            samples += amplitude * np.sin(harmonic * phase + rng.uniform(0, 2 * np.pi))
        syllable_rate = rng.uniform(2.0, 6.0)
        envelope = 0.6 + 0.4 * np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
    else:
        start, stop = rng.uniform(2 * lo, 4 * hi, size=2)
        duration = length / sample_rate
        frequency = start + (stop - start) * t / duration
        phase = 2 * np.pi * np.cumsum(frequency) / sample_rate
        samples = np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase)
        envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(3.0, 8.0) * t) ** 2

    return Waveform(samples=normalize_rms(samples * envelope), sample_rate=sample_rate)


def synth_noise(
    seed: int,
    length: int,
    kind: NoiseKind | str = NoiseKind.lowpass,
    *,
    sample_rate: int = 16_000,
) -> Waveform:
    """Filtered white noise standing in for recorded environmental noise."""
    kind = NoiseKind(kind)
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal(length)
    nyquist = sample_rate / 2
    if kind == NoiseKind.lowpass:
        cutoff = rng.uniform(500.0, 2000.0)
        sos = scipy.signal.butter(4, cutoff, btype='lowpass', fs=sample_rate, output='sos')
        samples = scipy.signal.sosfilt(sos, samples)
    elif kind == NoiseKind.bandpass:
        low = rng.uniform(1000.0, 3000.0)
        high = min(low * rng.uniform(1.5, 2.5), 0.95 * nyquist)
        sos = scipy.signal.butter(4, [low, high], btype='bandpass', fs=sample_rate, output='sos')
        samples = scipy.signal.sosfilt(sos, samples)
    return Waveform(samples=normalize_rms(samples), sample_rate=sample_rate)


def write_wav(path: str | pathlib.Path, waveform: Waveform) -> pathlib.Path:
    """16-bit PCM mono; values already on the 1/32768 grid survive a round trip exactly."""
    path = pathlib.Path(path)
    pcm = np.clip(np.round(waveform.samples * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1)
    scipy.io.wavfile.write(path, waveform.sample_rate, pcm.astype('<i2'))
    return path


def read_wav(path: str | pathlib.Path) -> Waveform:
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ShapeMismatchError(f'{path} is not mono (shape {data.shape})')
    if data.dtype != np.int16:
        raise ValueError(f'{path} is not 16-bit PCM (dtype {data.dtype})')
    return Waveform(samples=data.astype(np.float64) / PCM_SCALE, sample_rate=sample_rate)


def read_raw_f64(path: str | pathlib.Path, sample_rate: int = 16_000) -> Waveform:
    """Headerless little-endian float64 samples."""
    samples = np.fromfile(path, dtype='<f8')
    return Waveform(samples=as_finite(samples), sample_rate=sample_rate)
