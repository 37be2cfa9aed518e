import numpy as np
import pytest
import ujson

from drift_se.data import Batch, SignalCorpus, toy_batches
from drift_se.exceptions import ConfigError, EmptyBatchError, NumericalError, ShapeMismatchError
from drift_se.generator import Generator, draw_sigmas
from drift_se.models import DriftTarget
from drift_se.schemas import (
    GeneratorConfig,
    KernelConfig,
    NegativeScope,
    NoiseSchedule,
    Paradigm,
    SigmaKind,
    StftConfig,
    TrainConfig,
)
from drift_se.signal import analysis_window, edge_margin, valid_region
from drift_se.tasks.denoise import run_denoise
from drift_se.trainer import (
    PointPipeline,
    TrainState,
    Trainer,
    build_sets,
    drift_loss,
    drift_targets,
    enhance,
    generate,
    speech_pipeline,
    train_step,
)

FIXED_ZERO = NoiseSchedule(kind=SigmaKind.fixed_zero)


def point_generator(zero_init_output=False, seed=0):
    return Generator(
        GeneratorConfig(
            paradigm=Paradigm.conditional,
            input_dim=2,
            hidden_dims=(8,),
            output_dim=2,
            zero_init_output=zero_init_output,
            seed=seed,
        )
    )


def point_batch(targets):
    count = targets.shape[0]
    return Batch(None, targets, np.arange(count), np.arange(count))


@pytest.fixture
def speech(speech_config):
    cfg = speech_config()
    pipeline = speech_pipeline(
        cfg.stft, cfg.compression, cfg.encoder, cfg.train, input_dim=cfg.generator.input_dim
    )
    corpus = SignalCorpus.build(cfg.data, cfg.seed)
    return cfg, pipeline, corpus


def test_sets_hold_every_frame_of_the_batch(rng):
    clean = (rng.standard_normal((2, 49, 8)), rng.standard_normal((2, 49, 4)))
    generated = (rng.standard_normal((2, 49, 8)), rng.standard_normal((2, 49, 4)))
    positives, negatives = build_sets(clean, generated)
    assert [p.shape[0] for p in positives] == [98, 98]
    assert [n.shape[0] for n in negatives] == [98, 98]
    np.testing.assert_array_equal(positives[0][49], clean[0][1, 0])


def test_set_construction_errors(rng):
    with pytest.raises(ShapeMismatchError):
        build_sets((rng.standard_normal((1, 3, 2)),), (rng.standard_normal((1, 3, 3)),))
    with pytest.raises(ShapeMismatchError):
        build_sets((rng.standard_normal((1, 3, 2)),), ())
    with pytest.raises(EmptyBatchError):
        build_sets((np.empty((0, 3, 2)),), (rng.standard_normal((1, 3, 2)),))


def test_loss_is_the_mean_squared_drift(rng):
    cfg = TrainConfig(kernel=KernelConfig(temperatures=(0.1, 0.5, 1.0)))
    generated = (rng.standard_normal((3, 5, 4)), rng.standard_normal((3, 5, 2)))
    clean = (rng.standard_normal((2, 5, 4)), rng.standard_normal((2, 5, 2)))
    targets, fields = drift_targets(generated, clean, cfg)
    loss, cotangents = drift_loss(generated, targets)
    expected = np.mean([np.mean(np.sum(field.vectors**2, axis=1)) for field in fields])
    assert loss == pytest.approx(expected, rel=1e-12)
    for layer, field, cotangent in zip(generated, fields, cotangents):
        # d loss / d phi = -2 V / (n_frames * n_layers)
        np.testing.assert_allclose(
            cotangent.reshape(-1, layer.shape[-1]), -2 * field.vectors / (15 * 2), atol=1e-14
        )


def test_targets_are_read_only(rng):
    generated = (rng.standard_normal((2, 3, 2)),)
    targets, _ = drift_targets(generated, (rng.standard_normal((2, 3, 2)),), TrainConfig())
    with pytest.raises(ValueError):
        targets.layers[0][0, 0, 0] = 1.0


def test_utterance_scope_uses_each_items_own_frames(rng):
    generated = (rng.standard_normal((2, 4, 3)),)
    clean = (rng.standard_normal((2, 4, 3)),)
    batch_cfg = TrainConfig(negative_scope=NegativeScope.batch)
    item_cfg = TrainConfig(negative_scope=NegativeScope.utterance)
    _, batch_fields = drift_targets(generated, clean, batch_cfg)
    _, item_fields = drift_targets(generated, clean, item_cfg)
    assert item_fields[0].vectors.shape == batch_fields[0].vectors.shape == (8, 3)
    assert not np.allclose(item_fields[0].vectors, batch_fields[0].vectors)
    # with a single utterance both scopes agree
    single = (generated[0][:1],)
    _, a = drift_targets(single, clean, batch_cfg)
    _, b = drift_targets(single, clean, item_cfg)
    np.testing.assert_array_equal(a[0].vectors, b[0].vectors)


def test_equilibrium_is_a_fixed_point_for_points():
    generator = point_generator(zero_init_output=True)
    before = {name: value.copy() for name, value in generator.params.items()}
    state = TrainState(generator=generator)
    cfg = TrainConfig(weight_decay=0.0, paradigm=Paradigm.conditional, sigma_schedule=FIXED_ZERO)
    # the zero output layer maps every draw to the origin, which is exactly the target
    metrics = train_step(
        state, point_batch(np.zeros((16, 2))), PointPipeline(), cfg, np.random.default_rng(0)
    )
    assert metrics.loss == 0.0
    assert metrics.mean_drift_norm == (0.0,)
    for name, value in generator.params.items():
        np.testing.assert_array_equal(value, before[name])


def test_equilibrium_is_a_fixed_point_for_speech(speech):
    cfg, pipeline, corpus = speech
    generator = Generator(cfg.generator)
    before = {name: value.copy() for name, value in generator.params.items()}
    noisy = corpus.test_noisy
    # zero output layer + skip: the generator reproduces its input, so feed that back as clean
    reproduced, _ = pipeline.synthesize(pipeline.features(noisy))
    batch = Batch(noisy, reproduced, np.arange(2), np.arange(2))
    train = cfg.train.model_copy(update={'weight_decay': 0.0})
    metrics = train_step(
        TrainState(generator=generator), batch, pipeline, train, np.random.default_rng(0)
    )
    assert metrics.loss == 0.0
    for name, value in generator.params.items():
        np.testing.assert_array_equal(value, before[name])


def test_speech_gradient_matches_central_differences(speech, rng):
    cfg, pipeline, corpus = speech
    generator = Generator(cfg.generator.model_copy(update={'zero_init_output': False}))
    features = pipeline.features(corpus.test_noisy)
    clean = pipeline.encode_targets(corpus.test_clean)

    outputs = generator.forward(features)
    generated, cache = pipeline.forward(outputs)
    targets, _ = drift_targets(generated, clean, cfg.train)
    _, cotangents = drift_loss(generated, targets)
    grads = generator.backward(pipeline.backward(cache, cotangents))

    def loss(params):
        saved, generator.params = generator.params, params
        layers, _ = pipeline.forward(generator.forward(features))
        generator.params = saved
        return drift_loss(layers, targets)[0]

    step = 1e-5
    for _ in range(3):
        direction = {name: rng.standard_normal(value.shape) for name, value in grads.items()}
        plus = {name: value + step * direction[name] for name, value in generator.params.items()}
        minus = {name: value - step * direction[name] for name, value in generator.params.items()}
        numeric = (loss(plus) - loss(minus)) / (2 * step)
        analytic = sum(np.sum(grads[name] * direction[name]) for name in grads)
        assert numeric == pytest.approx(analytic, rel=1e-4)


def test_pipeline_frame_layout(speech):
    cfg, pipeline, corpus = speech
    features = pipeline.features(corpus.test_noisy)
    assert features.shape == (2, 61, 66)
    layers, _ = pipeline.forward(features)
    # 1024 aligned samples minus a 48-sample margin at each end leave 928 for the encoder
    assert pipeline.valid_length(1024) == 928
    assert [layer.shape for layer in layers] == [(2, 14, 12), (2, 14, 10)]
    assert pipeline.latent_dims == (12, 10)
    np.testing.assert_allclose(
        pipeline.to_frames(pipeline.to_spectrum(features)), features, atol=0
    )


def test_pipeline_rejects_mismatched_generator(speech_config):
    cfg = speech_config()
    with pytest.raises(ConfigError):
        speech_pipeline(cfg.stft, cfg.compression, cfg.encoder, cfg.train, input_dim=64)


def test_training_steps_are_deterministic(toy_config):
    cfg = toy_config()

    def run():
        trainer = Trainer(point_generator(seed=3), PointPipeline(), cfg.train)
        trainer.run_epoch(toy_batches(trainer.rng, cfg.data, 32, 5))
        return trainer

    first, second = run(), run()
    for name in first.generator.params:
        np.testing.assert_array_equal(first.generator.params[name], second.generator.params[name])
    assert [row['loss'] for row in first.rows] == [row['loss'] for row in second.rows]
    assert first.state.step == 5 and first.state.epoch == 1


def test_resume_continues_bit_for_bit(tmp_path, toy_config):
    cfg = toy_config()

    straight = Trainer(point_generator(seed=2), PointPipeline(), cfg.train)
    for _ in range(2):
        straight.run_epoch(toy_batches(straight.rng, cfg.data, 32, 3))

    first = Trainer(point_generator(seed=2), PointPipeline(), cfg.train)
    first.run_epoch(toy_batches(first.rng, cfg.data, 32, 3))
    path = first.save(tmp_path / 'checkpoint.bin')
    resumed = Trainer.resume(path, PointPipeline(), cfg.train)
    assert (resumed.state.step, resumed.state.epoch) == (3, 1)
    resumed.run_epoch(toy_batches(resumed.rng, cfg.data, 32, 3))

    for name, value in straight.generator.params.items():
        np.testing.assert_array_equal(resumed.generator.params[name], value)


def test_non_finite_generation_aborts_with_a_dump(tmp_path):
    generator = point_generator()
    generator.params['layer1.bias'] = np.array([np.nan, 0.0])
    state = TrainState(generator=generator)
    cfg = TrainConfig(paradigm=Paradigm.conditional, sigma_schedule=FIXED_ZERO)
    with pytest.raises(NumericalError) as info:
        train_step(
            state,
            point_batch(np.zeros((4, 2))),
            PointPipeline(),
            cfg,
            np.random.default_rng(0),
            out_dir=tmp_path,
        )
    dump = ujson.loads((tmp_path / 'nan_dump.json').read_text())
    assert dump['indices'] == [0, 1, 2, 3]
    assert info.value.diagnostics['step'] == 0


def test_enhance_is_one_deterministic_pass(speech):
    cfg, pipeline, corpus = speech
    generator = Generator(cfg.generator)
    enhanced = enhance(generator, corpus.test_noisy, pipeline)
    again = enhance(generator, corpus.test_noisy, pipeline)
    np.testing.assert_array_equal(enhanced, again)
    assert enhanced.shape == (2, 928)
    # identity generator: the output is the noisy input up to the STFT round trip
    np.testing.assert_allclose(enhanced, corpus.test_noisy[:, 48:-48], atol=1e-9)


def test_conditional_enhancement_needs_an_rng(speech_config):
    cfg = speech_config(paradigm=Paradigm.conditional)
    pipeline = speech_pipeline(
        cfg.stft, cfg.compression, cfg.encoder, cfg.train, input_dim=cfg.generator.input_dim
    )
    generator = Generator(cfg.generator)
    noisy = SignalCorpus.build(cfg.data, 0).test_noisy
    with pytest.raises(ConfigError):
        enhance(generator, noisy, pipeline)
    out = enhance(generator, noisy, pipeline, rng=np.random.default_rng(0))
    assert out.shape == pipeline.crop(noisy).shape


def test_paradigm_inference_contracts(speech_config):
    direct = speech_config()
    pipeline = speech_pipeline(
        direct.stft, direct.compression, direct.encoder, direct.train, input_dim=66
    )
    noisy = SignalCorpus.build(direct.data, 0).test_noisy[:1]
    generator = Generator(direct.generator.model_copy(update={'zero_init_output': False}))
    reference = enhance(generator, noisy, pipeline)
    for _ in range(50):
        np.testing.assert_array_equal(enhance(generator, noisy, pipeline), reference)

    conditional = speech_config(paradigm=Paradigm.conditional)
    sampler = Generator(conditional.generator.model_copy(update={'zero_init_output': False}))
    rng = np.random.default_rng(5)
    for _ in range(50):
        first = enhance(sampler, noisy, pipeline, rng=rng)
        second = enhance(sampler, noisy, pipeline, rng=rng)
        assert np.linalg.norm(first - second) > 0


def test_valid_region_has_full_window_overlap():
    cfg = StftConfig()
    length = 8190
    window = analysis_window(cfg.window_length)
    summed = np.zeros(length)
    for start in range(0, length - cfg.window_length + 1, cfg.hop_length):
        summed[start : start + cfg.window_length] += window**2
    region = valid_region(length, cfg)
    assert (region.start, region.stop) == (382, 8190 - 382)
    assert edge_margin(cfg) == 382
    assert summed[region].min() > 0.9 * summed.max()
    # outside the region the squared window sum falls toward zero
    assert summed[1] < 1e-6 and summed[-2] < 1e-6


def test_edge_errors_never_reach_the_encoder(speech, rng):
    cfg, pipeline, corpus = speech
    features = pipeline.features(corpus.test_noisy)
    clean_samples, _ = pipeline.synthesize(features)
    perturbed, _ = pipeline.synthesize(features + 1e-3 * rng.standard_normal(features.shape))
    error = np.abs(perturbed - clean_samples)
    margin = edge_margin(cfg.stft)
    inner = pipeline.crop(error)
    edges = np.concatenate([error[:, :margin], error[:, -margin:]], axis=-1)
    # the overlap-add normalizer amplifies frame errors by up to 1 / w near the ends
    assert edges.max() > 10 * inner.max()

    layers, cache = pipeline.forward(features)
    assert cache.length == 1024
    grads = pipeline.backward(cache, tuple(np.ones_like(layer) for layer in layers))
    assert grads.shape == features.shape
    assert np.all(np.isfinite(grads))


def test_training_keeps_held_out_si_sdr(speech_config, settings):
    summary = run_denoise(speech_config(), settings=settings)
    assert summary['initial_si_sdr'] == pytest.approx(summary['noisy_si_sdr'], abs=1e-6)
    assert summary['final_si_sdr'] > summary['noisy_si_sdr'] - 3.0
    report = summary['final_report']
    assert report['si_sdr_db'] == pytest.approx(summary['final_si_sdr'])
    assert report['mmd2'] >= 0
    assert len(report['mean_drift_norm']) == 2


def test_direct_mapping_injects_log_normal_noise(speech):
    cfg, pipeline, corpus = speech
    generator = Generator(cfg.generator)
    features = pipeline.features(corpus.test_noisy)
    train = cfg.train.model_copy(update={'sigma_schedule': NoiseSchedule()})

    outputs, sigmas = generate(generator, features, np.random.default_rng(4), train, batch_size=2)
    replay = np.random.default_rng(4)
    expected_sigmas, _ = draw_sigmas(NoiseSchedule(), replay, 2)
    epsilon = replay.standard_normal(features.shape)
    np.testing.assert_array_equal(sigmas, expected_sigmas)
    assert np.all((sigmas >= 0.01) & (sigmas <= 0.3))
    # zero output layer + skip: the generator sees y + sigma * eps and returns it unchanged
    np.testing.assert_allclose(outputs, features + sigmas[:, None, None] * epsilon, atol=1e-12)

    batch = Batch(corpus.test_noisy, corpus.test_clean, np.arange(2), np.arange(2))
    metrics = train_step(
        TrainState(generator=generator), batch, pipeline, train, np.random.default_rng(0)
    )
    assert 0.01 <= metrics.sigma_mean <= 0.3
    assert metrics.loss > 0


def test_direct_mapping_with_sigma_needs_an_rng(speech):
    cfg, pipeline, corpus = speech
    generator = Generator(cfg.generator)
    with pytest.raises(ConfigError):
        enhance(generator, corpus.test_noisy, pipeline, sigma=0.1)
    rng = np.random.default_rng(0)
    noisy_pass = enhance(generator, corpus.test_noisy, pipeline, rng=rng, sigma=0.1)
    assert not np.allclose(noisy_pass, enhance(generator, corpus.test_noisy, pipeline))


def test_targets_are_constants_of_the_loss(rng):
    cfg = TrainConfig(kernel=KernelConfig(temperatures=(0.5, 1.0)))
    generated = (rng.standard_normal((2, 4, 3)),)
    clean = (rng.standard_normal((2, 4, 3)),)
    targets, _ = drift_targets(generated, clean, cfg)
    loss, cotangents = drift_loss(generated, targets)

    shifted = DriftTarget(layers=(targets.layers[0] + 0.1,))
    shifted_loss, shifted_cotangents = drift_loss(generated, shifted)
    assert shifted_loss != pytest.approx(loss)
    # the cotangent depends on the target only through the residual phi - target
    np.testing.assert_allclose(
        shifted_cotangents[0] - cotangents[0], np.full((2, 4, 3), -2 * 0.1 / 8), atol=1e-14
    )

    def frozen(phi):
        return drift_loss((phi,), targets)[0]

    def redrifted(phi):
        moving, _ = drift_targets((phi,), clean, cfg)
        return drift_loss((phi,), moving)[0]

    step = 1e-6
    direction = rng.standard_normal(generated[0].shape)
    analytic = np.sum(cotangents[0] * direction)
    plus, minus = generated[0] + step * direction, generated[0] - step * direction
    assert (frozen(plus) - frozen(minus)) / (2 * step) == pytest.approx(analytic, rel=1e-6)
    # differentiating through the field as well gives a different direction
    through_field = (redrifted(plus) - redrifted(minus)) / (2 * step)
    assert through_field != pytest.approx(analytic, rel=1e-3)
