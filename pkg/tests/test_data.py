import numpy as np
import pytest

from drift_se.data import (
    SignalCorpus,
    Stream,
    derive_seed,
    make_clean_set,
    ring_centers,
    sample_toy_target,
    toy_batches,
)
from drift_se.exceptions import EmptyBatchError
from drift_se.metrics import snr_db, spectral_centroid
from drift_se.schemas import CleanKind, DataConfig


def test_derived_seeds_separate_streams():
    seeds = {derive_seed(0, stream, 0) for stream in Stream}
    assert len(seeds) == len(Stream)
    assert derive_seed(3, Stream.train_clean, 5) == derive_seed(3, Stream.train_clean, 5)


def test_clean_kinds_are_assigned_round_robin(small_data):
    cfg = small_data.model_copy(update={'clean_kinds': (CleanKind.harmonic, CleanKind.am_chirp)})
    mixed = make_clean_set(0, Stream.train_clean, 4, cfg)
    harmonic = make_clean_set(0, Stream.train_clean, 4, small_data)
    np.testing.assert_array_equal(mixed[0], harmonic[0])
    assert not np.array_equal(mixed[1], harmonic[1])


def test_corpus_is_reproducible(small_data):
    first = SignalCorpus.build(small_data, 4)
    second = SignalCorpus.build(small_data, 4)
    np.testing.assert_array_equal(first.train_clean, second.train_clean)
    np.testing.assert_array_equal(first.test_noisy, second.test_noisy)
    assert first.train_clean.shape == (4, 1024)
    assert first.pool is None


def test_held_out_mixtures_use_the_test_snr(small_data):
    corpus = SignalCorpus.build(small_data, 0)
    for clean, noisy in zip(corpus.test_clean, corpus.test_noisy):
        assert snr_db(clean, noisy) == pytest.approx(small_data.test_snr_db, abs=1e-9)


def test_pool_never_shares_items_with_the_paired_set(small_data):
    corpus = SignalCorpus.build(small_data, 0, with_pool=True)
    assert corpus.pool.shape == (small_data.n_pool, 1024)
    for item in corpus.pool:
        assert not any(np.array_equal(item, clean) for clean in corpus.train_clean)


def test_paired_batches_cover_the_epoch(rng, small_data):
    corpus = SignalCorpus.build(small_data, 0)
    batches = list(corpus.batches(rng, 3))
    assert [batch.targets.shape[0] for batch in batches] == [3, 1]
    indices = np.concatenate([batch.indices for batch in batches])
    assert sorted(indices) == list(range(small_data.n_train))
    for batch in batches:
        np.testing.assert_array_equal(batch.targets, corpus.train_clean[batch.indices])
        for clean, noisy, snr in zip(batch.targets, batch.noisy, batch.snr_db):
            assert snr in small_data.snr_db
            assert snr_db(clean, noisy) == pytest.approx(snr, abs=1e-9)


def test_unpaired_batches_draw_targets_from_the_pool(rng, small_data):
    corpus = SignalCorpus.build(small_data, 0, with_pool=True)
    for batch in corpus.batches(rng, 2, unpaired=True):
        np.testing.assert_array_equal(batch.targets, corpus.pool[batch.target_indices])


def test_unpaired_batches_need_a_pool(rng, small_data):
    corpus = SignalCorpus.build(small_data, 0)
    with pytest.raises(EmptyBatchError):
        next(corpus.batches(rng, 2, unpaired=True))


def test_shifted_pool_has_a_higher_fundamental(small_data):
    corpus = SignalCorpus.build(small_data, 0, with_pool=True, pool_f0_range=(400.0, 800.0))
    default = SignalCorpus.build(small_data, 0, with_pool=True)
    shifted = np.mean([spectral_centroid(item) for item in corpus.pool])
    baseline = np.mean([spectral_centroid(item) for item in default.pool])
    assert shifted > baseline


def test_ring_centers():
    centers = ring_centers(4, 2.0)
    np.testing.assert_allclose(centers, [[2, 0], [0, 2], [-2, 0], [0, -2]], atol=1e-12)


def test_ring_samples_stay_near_the_ring(rng):
    cfg = DataConfig(toy_components=8, toy_radius=4.0, toy_std=0.2)
    points = sample_toy_target(rng, 2000, cfg)
    radii = np.linalg.norm(points, axis=1)
    assert abs(radii.mean() - 4.0) < 0.1


def test_toy_batches(rng):
    batches = list(toy_batches(rng, DataConfig(toy_target='gaussian'), 16, 3))
    assert len(batches) == 3
    assert all(batch.noisy is None and batch.targets.shape == (16, 2) for batch in batches)
