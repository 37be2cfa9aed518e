"""One-step mapping function f_theta, its reverse-mode gradients and the sigma sampler."""

from __future__ import annotations

import pathlib
import struct
import typing

import numpy as np
import ujson
from scipy.special import expit
from scipy.stats import norm

from .exceptions import (
    BackwardWithoutForwardError,
    ConfigError,
    ParadigmMismatchError,
    SamplerExhaustedError,
    ShapeMismatchError,
)
from .logging import get_logger
from .models import as_finite
from .schemas import Activation, GeneratorConfig, NoiseSchedule, Paradigm, SigmaKind

logger = get_logger()

CHECKPOINT_MAGIC = b'DRFTSE01'


def _activate(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind == Activation.silu:
        return pre * expit(pre)
    if kind == Activation.tanh:
        return np.tanh(pre)
    return pre


def _activation_grad(kind: Activation, pre: np.ndarray) -> np.ndarray:
    if kind == Activation.silu:
        gate = expit(pre)
        return gate + pre * gate * (1.0 - gate)
    if kind == Activation.tanh:
        return 1.0 - np.tanh(pre) ** 2
    return np.ones_like(pre)


def _as_column(values: typing.Any, ndim: int) -> np.ndarray:
    """Reshape a scalar or per-item array so it broadcasts over trailing axes."""
    values = np.asarray(values, dtype=np.float64)
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def init_params(config: GeneratorConfig) -> dict[str, np.ndarray]:
    """Fan-in scaled Gaussian weights, zero biases, optionally a zero output layer."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    dims = [config.input_dim, *config.hidden_dims, config.output_dim]
    n_layers = len(dims) - 1
    for index in range(n_layers):
        fan_in = dims[index] + config.condition_dim
        weight = rng.standard_normal((fan_in, dims[index + 1])) / np.sqrt(fan_in)
        if index == n_layers - 1 and config.zero_init_output:
            weight = np.zeros_like(weight)
        params[f'layer{index}.weight'] = weight
        params[f'layer{index}.bias'] = np.zeros(dims[index + 1])
    return params


class Tape(typing.NamedTuple):
    inputs: np.ndarray
    layer_inputs: tuple[np.ndarray, ...]
    pre_activations: tuple[np.ndarray, ...]


class Generator:
    """Fully connected f_theta acting on the last axis of its input.

    ``forward`` records the intermediate activations on a tape that the next
    ``backward`` call consumes.
    """

    def __init__(self, config: GeneratorConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        self._check_params()
        self._tape: Tape | None = None

    @property
    def paradigm(self) -> Paradigm:
        return self.config.paradigm

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden_dims) + 1

    def _check_params(self) -> None:
        expected = init_params_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.params:
                raise ConfigError(f'missing generator parameter {name}')
            if self.params[name].shape != shape:
                raise ShapeMismatchError(
                    f'{name} has shape {self.params[name].shape}, expected {shape}'
                )

    def forward(self, inputs: np.ndarray, condition: np.ndarray | None = None) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.shape[-1] != self.config.input_dim:
            raise ShapeMismatchError(
                f'input dim {inputs.shape[-1]} does not match {self.config.input_dim}'
            )
        if self.config.condition_dim:
            if condition is None or condition.shape != inputs.shape[:-1] + (
                self.config.condition_dim,
            ):
                raise ShapeMismatchError('condition missing or misshaped')

        hidden = inputs
        layer_inputs, pre_activations = [], []
        for index in range(self.n_layers):
            layer_input = (
                np.concatenate([hidden, condition], axis=-1)
                if self.config.condition_dim
                else hidden
            )
            pre = layer_input @ self.params[f'layer{index}.weight'] + self.params[
                f'layer{index}.bias'
            ]
            layer_inputs.append(layer_input)
            pre_activations.append(pre)
            hidden = pre if index == self.n_layers - 1 else _activate(self.config.activation, pre)

        output = inputs + hidden if self.config.skip else hidden
        self._tape = Tape(inputs, tuple(layer_inputs), tuple(pre_activations))
        return output

    def backward(self, grad_output: np.ndarray) -> dict[str, np.ndarray]:
        """Exact parameter gradients of ``sum(grad_output * output)`` for the taped pass."""
        if self._tape is None:
            raise BackwardWithoutForwardError('backward called before any forward pass')
        tape, self._tape = self._tape, None
        grad_output = np.asarray(grad_output, dtype=np.float64)
        if grad_output.shape != tape.pre_activations[-1].shape:
            raise ShapeMismatchError('cotangent shape does not match the generator output')

        grads: dict[str, np.ndarray] = {}
        grad = grad_output
        for index in range(self.n_layers - 1, -1, -1):
            if index < self.n_layers - 1:
                grad = grad * _activation_grad(self.config.activation, tape.pre_activations[index])
            layer_input = tape.layer_inputs[index]
            flat_input = layer_input.reshape(-1, layer_input.shape[-1])
            flat_grad = grad.reshape(-1, grad.shape[-1])
            grads[f'layer{index}.weight'] = flat_input.T @ flat_grad
            grads[f'layer{index}.bias'] = flat_grad.sum(axis=0)
            grad = grad @ self.params[f'layer{index}.weight'].T
            if self.config.condition_dim:
                grad = grad[..., : -self.config.condition_dim]

        self.input_grad = grad + grad_output if self.config.skip else grad
        return {name: grads[name] for name in self.params}

    def parameter_count(self) -> int:
        return int(sum(param.size for param in self.params.values()))


def init_params_shapes(config: GeneratorConfig) -> dict[str, tuple[int, ...]]:
    dims = [config.input_dim, *config.hidden_dims, config.output_dim]
    shapes = {}
    for index in range(len(dims) - 1):
        shapes[f'layer{index}.weight'] = (dims[index] + config.condition_dim, dims[index + 1])
        shapes[f'layer{index}.bias'] = (dims[index + 1],)
    return shapes


def forward_direct(
    noisy_input: np.ndarray,
    sigma: float | np.ndarray,
    epsilon: np.ndarray,
    params: Generator,
) -> np.ndarray:
    """``f_theta(y + sigma * eps)``; with ``sigma == 0`` the output ignores ``epsilon``."""
    if params.paradigm != Paradigm.direct_mapping:
        raise ParadigmMismatchError(f'generator paradigm is {params.paradigm.value}')
    noisy_input = as_finite(noisy_input)
    epsilon = as_finite(epsilon)
    if noisy_input.shape != epsilon.shape:
        raise ShapeMismatchError(f'noise shape {epsilon.shape} != input {noisy_input.shape}')
    sigma = _as_column(sigma, noisy_input.ndim)
    if np.any(sigma < 0):
        raise ValueError('sigma must be non-negative')
    return params.forward(noisy_input + sigma * epsilon)


def forward_conditional(
    epsilon: np.ndarray, condition: np.ndarray | None, params: Generator
) -> np.ndarray:
    """``f_theta([eps || condition])`` with the condition fed to every layer."""
    if params.paradigm != Paradigm.conditional:
        raise ParadigmMismatchError(f'generator paradigm is {params.paradigm.value}')
    epsilon = as_finite(epsilon)
    if condition is not None:
        condition = as_finite(condition)
    return params.forward(epsilon, condition)


def draw_sigmas(
    schedule: NoiseSchedule, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, int]:
    """Draw ``size`` sigmas by rejection; also returns the number of proposals used."""
    if schedule.kind == SigmaKind.fixed_zero:
        return np.zeros(size), 0

    accepted: list[np.ndarray] = []
    n_accepted, n_proposals = 0, 0
    for _ in range(schedule.max_iterations):
        if n_accepted >= size:
            break
        needed = size - n_accepted
        proposals = np.exp(rng.normal(schedule.mu, schedule.sigma_log, size=needed))
        n_proposals += needed
        keep = proposals[(proposals >= schedule.lo) & (proposals <= schedule.hi)]
        accepted.append(keep)
        n_accepted += keep.size
    if n_accepted < size:
        raise SamplerExhaustedError(
            f'only {n_accepted} of {size} sigmas accepted after {n_proposals:,} proposals'
        )
    return np.concatenate(accepted)[:size], n_proposals


def sample_sigma(schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    sigmas, _ = draw_sigmas(schedule, rng, 1)
    return float(sigmas[0])


def expected_acceptance(schedule: NoiseSchedule) -> float:
    """Probability that one log-normal proposal lands inside [lo, hi]."""
    if schedule.sigma_log == 0:
        return float(schedule.lo <= np.exp(schedule.mu) <= schedule.hi)
    upper = (np.log(schedule.hi) - schedule.mu) / schedule.sigma_log
    lower = (np.log(schedule.lo) - schedule.mu) / schedule.sigma_log
    return float(norm.cdf(upper) - norm.cdf(lower))


def save_checkpoint(
    path: str | pathlib.Path,
    generator: Generator,
    *,
    extra: dict[str, np.ndarray] | None = None,
    meta: dict[str, typing.Any] | None = None,
) -> pathlib.Path:
    """Write parameters (and optional extra arrays) as little-endian float64 after a header."""
    path = pathlib.Path(path)
    arrays = {**generator.params, **(extra or {})}
    header = {
        'config': generator.config.model_dump(mode='json'),
        'arrays': [{'name': name, 'shape': list(array.shape)} for name, array in arrays.items()],
        'meta': meta or {},
    }
    header_bytes = ujson.dumps(header, sort_keys=True).encode('utf-8')
    with path.open('wb') as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack('<Q', len(header_bytes)))
        handle.write(header_bytes)
        for array in arrays.values():
            handle.write(np.ascontiguousarray(array, dtype='<f8').tobytes())
    logger.info(f'💾 Checkpoint written to {path} ({len(arrays)} arrays)')
    return path


def load_checkpoint(
    path: str | pathlib.Path,
) -> tuple[Generator, dict[str, np.ndarray], dict[str, typing.Any]]:
    """Inverse of :func:`save_checkpoint`: (generator, extra arrays, meta)."""
    data = pathlib.Path(path).read_bytes()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ConfigError(f'{path} is not a generator checkpoint')
    offset = len(CHECKPOINT_MAGIC)
    (header_length,) = struct.unpack_from('<Q', data, offset)
    offset += 8
    header = ujson.loads(data[offset : offset + header_length].decode('utf-8'))
    offset += header_length

    arrays: dict[str, np.ndarray] = {}
    for entry in header['arrays']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        array = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(shape)
        arrays[entry['name']] = array.astype(np.float64)
        offset += 8 * count

    config = GeneratorConfig(**header['config'])
    names = init_params_shapes(config)
    generator = Generator(config, {name: arrays.pop(name) for name in names})
    return generator, arrays, header['meta']
