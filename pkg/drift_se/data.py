"""Synthetic corpora and mini-batch sampling.

Every signal is derived from ``(experiment seed, stream, index)`` so corpora are
reproducible item by item and the clean pool used for unpaired training never
shares a seed with the paired clean set.
"""

from __future__ import annotations

import dataclasses
import enum
import typing

import numpy as np

from .exceptions import EmptyBatchError
from .logging import get_logger
from .models import Waveform
from .schemas import CleanKind, DataConfig, NoiseKind
from .signal import mix_at_snr, synth_clean, synth_noise

logger = get_logger()


class Stream(int, enum.Enum):
    train_clean = 0
    train_noise = 1
    test_clean = 2
    test_noise = 3
    pool_clean = 4


def derive_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1, np.uint64)[0])


def make_clean_set(
    seed: int,
    stream: Stream,
    count: int,
    cfg: DataConfig,
    *,
    kinds: typing.Sequence[CleanKind] | None = None,
    f0_range: tuple[float, float] | None = None,
) -> np.ndarray:
    """(count, L) clean signals; families are assigned round-robin."""
    kinds = tuple(kinds or cfg.clean_kinds)
    return np.stack(
        [
            synth_clean(
                derive_seed(seed, stream, index),
                cfg.utterance_length,
                kinds[index % len(kinds)],
                f0_range=f0_range or cfg.f0_range,
            ).samples
            for index in range(count)
        ]
    )


def make_noise_set(
    seed: int,
    stream: Stream,
    count: int,
    cfg: DataConfig,
    kinds: typing.Sequence[NoiseKind] | None = None,
) -> np.ndarray:
    kinds = tuple(kinds or cfg.noise_kinds)
    return np.stack(
        [
            synth_noise(
                derive_seed(seed, stream, index), cfg.utterance_length, kinds[index % len(kinds)]
            ).samples
            for index in range(count)
        ]
    )


def mix_batch(clean: np.ndarray, noise: np.ndarray, snrs: typing.Sequence[float]) -> np.ndarray:
    return np.stack(
        [
            mix_at_snr(Waveform(samples=c), Waveform(samples=n), float(snr)).samples
            for c, n, snr in zip(clean, noise, snrs)
        ]
    )


class Batch(typing.NamedTuple):
    """One training mini-batch.

    ``targets`` are the samples the positive set is built from: the paired clean
    signals, an independent clean pool draw, or target-distribution points.
    """

    noisy: np.ndarray | None
    targets: np.ndarray
    indices: np.ndarray
    target_indices: np.ndarray
    snr_db: np.ndarray | None = None


@dataclasses.dataclass
class SignalCorpus:
    train_clean: np.ndarray
    train_noise: np.ndarray
    test_clean: np.ndarray
    test_noisy: np.ndarray
    pool: np.ndarray | None = None
    snr_choices: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)

    @classmethod
    def build(
        cls,
        cfg: DataConfig,
        seed: int,
        *,
        with_pool: bool = False,
        pool_kind: CleanKind | None = None,
        pool_f0_range: tuple[float, float] | None = None,
    ) -> SignalCorpus:
        logger.info(
            f'🎼 Synthesizing corpus: {cfg.n_train:,} train, {cfg.n_test:,} test, '
            f'{cfg.n_pool if with_pool else 0:,} pool items of {cfg.utterance_length:,} samples'
        )
        test_clean = make_clean_set(seed, Stream.test_clean, cfg.n_test, cfg)
        test_noise = make_noise_set(seed, Stream.test_noise, cfg.n_test, cfg)
        pool = None
        if with_pool:
            pool = make_clean_set(
                seed,
                Stream.pool_clean,
                cfg.n_pool,
                cfg,
                kinds=(pool_kind,) if pool_kind else None,
                f0_range=pool_f0_range,
            )
        return cls(
            train_clean=make_clean_set(seed, Stream.train_clean, cfg.n_train, cfg),
            train_noise=make_noise_set(seed, Stream.train_noise, cfg.n_train, cfg),
            test_clean=test_clean,
            test_noisy=mix_batch(test_clean, test_noise, [cfg.test_snr_db] * cfg.n_test),
            pool=pool,
            snr_choices=cfg.snr_db,
        )

    def batches(
        self, rng: np.random.Generator, batch_size: int, *, unpaired: bool = False
    ) -> typing.Iterator[Batch]:
        """One epoch of dynamically mixed batches in a shuffled order.

        The noise partner and SNR of every clean item are redrawn each epoch. In
        unpaired mode the positives are drawn uniformly from the pool, independently
        of which noisy items were picked.
        """
        if unpaired and self.pool is None:
            raise EmptyBatchError('unpaired sampling needs a clean pool')
        n_items = self.train_clean.shape[0]
        order = rng.permutation(n_items)
        for start in range(0, n_items, batch_size):
            indices = order[start : start + batch_size]
            noise_indices = rng.integers(self.train_noise.shape[0], size=indices.size)
            snrs = rng.choice(np.asarray(self.snr_choices), size=indices.size)
            noisy = mix_batch(self.train_clean[indices], self.train_noise[noise_indices], snrs)
            if unpaired:
                target_indices = rng.integers(self.pool.shape[0], size=indices.size)
                targets = self.pool[target_indices]
            else:
                target_indices = indices
                targets = self.train_clean[indices]
            yield Batch(noisy, targets, indices, target_indices, snrs)


def ring_centers(components: int, radius: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(components) / components
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def sample_toy_target(rng: np.random.Generator, count: int, cfg: DataConfig) -> np.ndarray:
    """Draw from the 2-D target: a ring of Gaussians or a single standard Gaussian."""
    if cfg.toy_target == 'gaussian':
        return rng.standard_normal((count, 2))
    centers = ring_centers(cfg.toy_components, cfg.toy_radius)
    labels = rng.integers(cfg.toy_components, size=count)
    return centers[labels] + cfg.toy_std * rng.standard_normal((count, 2))


def toy_batches(
    rng: np.random.Generator, cfg: DataConfig, batch_size: int, steps: int
) -> typing.Iterator[Batch]:
    for _ in range(steps):
        targets = sample_toy_target(rng, batch_size, cfg)
        yield Batch(None, targets, np.arange(batch_size), np.arange(batch_size))
