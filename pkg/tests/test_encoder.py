import numpy as np
import pytest

from drift_se.encoder import FrozenEncoder, encode, encode_gradient, frame_count, get_encoder
from drift_se.exceptions import ShapeMismatchError, SignalTooShortError
from drift_se.models import Waveform
from drift_se.schemas import EncoderSpec


@pytest.mark.parametrize(
    'length, expected',
    [(8190, 25), (400, 1), (719, 1), (720, 2), (16_000, 49)],
)
def test_frame_count(length, expected):
    assert frame_count(length, 400, 320) == expected


def test_default_stack_shapes(rng):
    spec = EncoderSpec()
    stack = encode(Waveform(samples=0.1 * rng.standard_normal(8190)), spec)
    assert stack.taps == (0, 1, 2)
    assert [layer.shape for layer in stack.layers] == [(25, 64)] * 3


def test_batched_forward_matches_single_items(rng, small_encoder):
    encoder = FrozenEncoder(small_encoder)
    batch = 0.1 * rng.standard_normal((3, 512))
    stack, _ = encoder.forward(batch)
    for index in range(3):
        single, _ = encoder.forward(batch[index])
        for layer, expected in zip(stack.layers, single.layers):
            np.testing.assert_allclose(layer[index], expected, atol=1e-14)


def test_encoder_is_deterministic_and_frozen(small_encoder):
    first, second = FrozenEncoder(small_encoder), FrozenEncoder(small_encoder)
    for a, b in zip(first.weights, second.weights):
        np.testing.assert_array_equal(a, b)
        with pytest.raises(ValueError):
            a[0, 0] = 1.0
    assert get_encoder(small_encoder) is get_encoder(small_encoder)


def test_identity_encoder_returns_frames(rng):
    spec = EncoderSpec(kind='identity', taps=(0,), frame_len=8, frame_hop=4)
    samples = rng.standard_normal(20)
    stack = encode(Waveform(samples=samples), spec)
    assert stack.layers[0].shape == (4, 8)
    np.testing.assert_array_equal(stack.layers[0][1], samples[4:12])


def test_gradient_matches_central_differences(rng, small_encoder):
    samples = 0.1 * rng.standard_normal(512)
    encoder = FrozenEncoder(small_encoder)
    stack, _ = encoder.forward(samples)
    upstream = [rng.standard_normal(layer.shape) for layer in stack.layers]
    gradient = encode_gradient(Waveform(samples=samples), small_encoder, upstream)

    def loss(values):
        layers, _ = encoder.forward(values)
        return sum(np.sum(u * layer) for u, layer in zip(upstream, layers.layers))

    step = 1e-5
    for _ in range(5):
        direction = rng.standard_normal(samples.shape)
        numeric = (loss(samples + step * direction) - loss(samples - step * direction)) / (2 * step)
        assert numeric == pytest.approx(gradient @ direction, rel=1e-4)


def test_samples_outside_every_frame_get_zero_gradient(rng, small_encoder):
    # 96-sample frames at hop 64 cover 1 + (600 - 96) // 64 frames; the tail is unused
    encoder = FrozenEncoder(small_encoder)
    stack, cache = encoder.forward(rng.standard_normal(600))
    gradient = encoder.backward(cache, [np.ones_like(layer) for layer in stack.layers])
    covered = (stack.frame_count - 1) * 64 + 96
    assert np.all(gradient[covered:] == 0)
    assert np.any(gradient[:covered] != 0)


def test_short_signal_is_rejected(small_encoder):
    with pytest.raises(SignalTooShortError):
        encode(Waveform(samples=np.zeros(50)), small_encoder)


def test_wrong_upstream_count(rng, small_encoder):
    encoder = FrozenEncoder(small_encoder)
    stack, cache = encoder.forward(rng.standard_normal(256))
    with pytest.raises(ShapeMismatchError):
        encoder.backward(cache, stack.layers[:1])


@pytest.mark.parametrize(
    'values',
    [
        {'taps': (0, 3)},
        {'taps': (1, 0)},
        {'taps': ()},
        {'layer_dims': (), 'taps': (0,)},
    ],
)
def test_invalid_specs(values):
    with pytest.raises(ValueError):
        EncoderSpec(**values)


def test_spec_text_round_trip():
    spec = EncoderSpec(layer_dims=(32, 16), taps=(1,), seed=11, frame_len=200, frame_hop=100)
    assert EncoderSpec.from_text(spec.to_text()) == spec
