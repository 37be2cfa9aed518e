"""Frozen latent extractors standing in for a pretrained speech encoder.

Waveforms are cut into rectangular frames (25 ms receptive field, 20 ms hop at
16 kHz by default) and every frame goes through a fixed stack of
``tanh(frame @ W + b)`` layers whose weights are drawn once from ``EncoderSpec.seed``.
"""

from __future__ import annotations

import functools
import typing

import numpy as np

from .exceptions import ShapeMismatchError, SignalTooShortError
from .logging import get_logger
from .models import LatentStack, Waveform, as_finite
from .schemas import EncoderKind, EncoderSpec

logger = get_logger()


def frame_count(length: int, frame_len: int, frame_hop: int) -> int:
    """Number of full frames; a trailing partial frame is dropped."""
    if length < frame_len:
        return 0
    return (length - frame_len) // frame_hop + 1


class EncoderCache(typing.NamedTuple):
    length: int
    activations: tuple[np.ndarray, ...]


class FrozenEncoder:
    """Deterministic multi-layer feature extractor with layer taps."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        weights, biases = [], []
        if spec.kind == EncoderKind.random_stack:
            rng = np.random.default_rng(spec.seed)
            fan_in = spec.frame_len
            for dim in spec.layer_dims:
                weight = rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in)
                bias = rng.standard_normal(dim) / np.sqrt(fan_in)
                weight.setflags(write=False)
                bias.setflags(write=False)
                weights.append(weight)
                biases.append(bias)
                fan_in = dim
        self.weights: tuple[np.ndarray, ...] = tuple(weights)
        self.biases: tuple[np.ndarray, ...] = tuple(biases)

    def frames(self, samples: np.ndarray) -> np.ndarray:
        """(..., L) samples -> (..., T', frame_len) frames, without an analysis window."""
        samples = as_finite(samples)
        length = samples.shape[-1]
        if length < self.spec.frame_len:
            raise SignalTooShortError(
                f'waveform of {length} samples is shorter than one frame ({self.spec.frame_len})'
            )
        windows = np.lib.stride_tricks.sliding_window_view(samples, self.spec.frame_len, axis=-1)
        return windows[..., :: self.spec.frame_hop, :]

    def forward_frames(self, frames: np.ndarray) -> tuple[tuple[np.ndarray, ...], tuple]:
        """Run the layer stack on already framed input of shape (..., frame_dim)."""
        if self.spec.kind == EncoderKind.identity:
            activations = (np.array(frames, dtype=np.float64),)
        else:
            if frames.shape[-1] != self.weights[0].shape[0]:
                raise ShapeMismatchError(
                    f'frames of dim {frames.shape[-1]} do not match encoder input '
                    f'{self.weights[0].shape[0]}'
                )
            hidden = frames
            activations = []
            for weight, bias in zip(self.weights, self.biases):
                hidden = np.tanh(hidden @ weight + bias)
                activations.append(hidden)
            activations = tuple(activations)
        return tuple(activations[tap] for tap in self.spec.taps), activations

    def backward_frames(
        self, activations: tuple[np.ndarray, ...], upstream: typing.Sequence[np.ndarray]
    ) -> np.ndarray:
        """Gradient w.r.t. the frames of ``sum_l <upstream_l, layer_l(frames)>``."""
        if len(upstream) != len(self.spec.taps):
            raise ShapeMismatchError('one cotangent per tapped layer is required')
        if self.spec.kind == EncoderKind.identity:
            return np.array(upstream[0], dtype=np.float64)

        by_layer = dict(zip(self.spec.taps, upstream))
        grad = np.zeros_like(activations[-1])
        for index in range(len(self.weights) - 1, -1, -1):
            if index in by_layer:
                grad = grad + by_layer[index]
            # tanh' = 1 - tanh^2
            grad = (grad * (1.0 - activations[index] ** 2)) @ self.weights[index].T
        return grad

    def forward(self, samples: np.ndarray) -> tuple[LatentStack, EncoderCache]:
        frames = self.frames(samples)
        tapped, activations = self.forward_frames(frames)
        stack = LatentStack(layers=tapped, taps=self.spec.taps)
        return stack, EncoderCache(length=samples.shape[-1], activations=activations)

    def backward(self, cache: EncoderCache, upstream: typing.Sequence[np.ndarray]) -> np.ndarray:
        """Per-sample gradient; frame gradients are overlap-added back onto the waveform."""
        frame_grads = self.backward_frames(cache.activations, upstream)
        n_frames = frame_grads.shape[-2]
        grad = np.zeros(frame_grads.shape[:-2] + (cache.length,))
        for index in range(n_frames):
            start = index * self.spec.frame_hop
            grad[..., start : start + self.spec.frame_len] += frame_grads[..., index, :]
        return grad


@functools.lru_cache(maxsize=16)
def get_encoder(spec: EncoderSpec) -> FrozenEncoder:
    logger.debug(f'🧊 Building frozen {spec.kind.value} encoder (seed={spec.seed})')
    return FrozenEncoder(spec)


def encode(waveform: Waveform, spec: EncoderSpec) -> LatentStack:
    stack, _ = get_encoder(spec).forward(waveform.samples)
    return stack


def encode_gradient(
    waveform: Waveform, spec: EncoderSpec, upstream: typing.Sequence[np.ndarray]
) -> np.ndarray:
    encoder = get_encoder(spec)
    _, cache = encoder.forward(waveform.samples)
    return encoder.backward(cache, upstream)
