"""Self-checks for the acoustic pipeline: transforms, compression, mixing and WAV IO."""

from __future__ import annotations

import pathlib
import tempfile

import numpy as np
import pandas as pd

from ..exceptions import PropertyCheckError
from ..logging import get_logger
from ..metrics import snr_db
from ..reporting import write_csv, write_summary
from ..schemas import ExperimentConfig, StftConfig
from ..settings import Settings
from ..signal import (
    analysis_window,
    compress_array,
    decompress_array,
    frame_aligned_length,
    istft_frames,
    mix_at_snr,
    read_wav,
    stft_frames,
    synth_clean,
    synth_noise,
    write_wav,
)
from .common import prepare_output
from .drift_eval import PropertyResult

logger = get_logger()

ROUND_TRIP_LENGTH = 16_384


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _check(name: str, deviation: float, tolerance: float, trials: int = 1) -> PropertyResult:
    return PropertyResult(
        name=name,
        passed=bool(deviation <= tolerance),
        max_deviation=float(deviation),
        tolerance=tolerance,
        trials=trials,
    )


def check_round_trip(rng: np.random.Generator, cfg: StftConfig) -> PropertyResult:
    """White noise through STFT and back, compared away from the first and last window."""
    samples = rng.standard_normal(ROUND_TRIP_LENGTH)
    rebuilt = istft_frames(stft_frames(samples, cfg), cfg)
    length = frame_aligned_length(ROUND_TRIP_LENGTH, cfg)
    interior = slice(cfg.window_length, length - cfg.window_length)
    error = float(np.abs(rebuilt[interior] - samples[interior]).max())
    return _check('stft_round_trip', error, 1e-6)


def check_linearity(rng: np.random.Generator, cfg: StftConfig) -> PropertyResult:
    x, y = rng.standard_normal((2, 4096))
    a, b = rng.uniform(-2, 2, size=2)
    combined = stft_frames(a * x + b * y, cfg)
    separate = a * stft_frames(x, cfg) + b * stft_frames(y, cfg)
    return _check('stft_linearity', _relative(combined, separate), 1e-12)


def check_parseval(rng: np.random.Generator, cfg: StftConfig) -> PropertyResult:
    """Per-frame energy of the windowed samples equals the one-sided spectral energy."""
    samples = rng.standard_normal(4096)
    coefficients = stft_frames(samples, cfg)
    weights = np.full(cfg.n_bins, 2.0)
    weights[0] = 1.0
    if cfg.fft_size % 2 == 0:
        weights[-1] = 1.0
    spectral = (weights[:, np.newaxis] * np.abs(coefficients) ** 2).sum(axis=0) / cfg.fft_size

    frames = np.lib.stride_tricks.sliding_window_view(samples, cfg.window_length)
    temporal = ((frames[:: cfg.hop_length] * analysis_window(cfg.window_length)) ** 2).sum(axis=-1)
    return _check('parseval', _relative(spectral, temporal), 1e-12)


def check_sine_concentration(cfg: StftConfig, bin_index: int = 40) -> PropertyResult:
    """A bin-centred sine keeps almost all of its energy within two bins of its own."""
    t = np.arange(8192)
    samples = np.sin(2 * np.pi * bin_index * t / cfg.fft_size)
    power = np.abs(stft_frames(samples, cfg)) ** 2
    near = power[bin_index - 2 : bin_index + 3].sum()
    share = float(near / power.sum())
    return _check('sine_concentration', max(0.0, 0.99 - share), 0.0)


def check_compression(rng: np.random.Generator, cfg: ExperimentConfig) -> PropertyResult:
    shape = (cfg.stft.n_bins, 16)
    coefficients = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    rebuilt = decompress_array(compress_array(coefficients, cfg.compression), cfg.compression)
    return _check('compression_round_trip', _relative(rebuilt, coefficients), 1e-12)


def check_mixing(cfg: ExperimentConfig, trials: int = 8) -> PropertyResult:
    rate = cfg.stft.sample_rate
    length = cfg.data.utterance_length
    deviations = []
    for index in range(trials):
        clean = synth_clean(index, length, sample_rate=rate)
        noise = synth_noise(index + 1000, length, sample_rate=rate)
        target = float(cfg.data.snr_db[index % len(cfg.data.snr_db)])
        mixture = mix_at_snr(clean, noise, target)
        deviations.append(abs(snr_db(clean, mixture) - target))
    return _check('mix_snr', max(deviations), 1e-9, trials)


def check_wav_round_trip(cfg: ExperimentConfig, directory: pathlib.Path) -> PropertyResult:
    rate = cfg.stft.sample_rate
    waveform = synth_clean(0, cfg.data.utterance_length, sample_rate=rate)
    restored = read_wav(write_wav(directory / 'round_trip.wav', waveform))
    if restored.sample_rate != rate or restored.length != waveform.length:
        return _check('wav_round_trip', np.inf, 0.5 / 32768)
    error = float(np.abs(restored.samples - waveform.samples).max())
    return _check('wav_round_trip', error, 0.5 / 32768 + 1e-12)


def run_suite(cfg: ExperimentConfig, directory: pathlib.Path) -> list[PropertyResult]:
    rng = np.random.default_rng(cfg.seed)
    return [
        check_round_trip(rng, cfg.stft),
        check_linearity(rng, cfg.stft),
        check_parseval(rng, cfg.stft),
        check_sine_concentration(cfg.stft),
        check_compression(rng, cfg),
        check_mixing(cfg),
        check_wav_round_trip(cfg, directory),
    ]


def run_stft_check(cfg: ExperimentConfig, *, settings: Settings | None = None, **_) -> dict:
    out_dir = prepare_output(cfg)
    with tempfile.TemporaryDirectory() as scratch:
        results = run_suite(cfg, pathlib.Path(scratch))
    for result in results:
        mark = '✅' if result.passed else '❌'
        logger.info(f'{mark} {result.name}: {result.max_deviation:.3e} <= {result.tolerance:.0e}')

    frame = pd.DataFrame.from_records([result.model_dump() for result in results])
    write_csv(frame, out_dir / 'stft_check.csv', settings=settings)
    failed = [result.name for result in results if not result.passed]
    summary = {
        'task': cfg.task.value,
        'seed': cfg.seed,
        'passed': not failed,
        'failed': failed,
        'results': {result.name: result.model_dump() for result in results},
    }
    write_summary(out_dir / 'summary.json', summary)
    if failed:
        raise PropertyCheckError(f'stft-check failed: {", ".join(failed)}')
    return summary
