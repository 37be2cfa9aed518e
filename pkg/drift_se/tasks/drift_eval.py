"""Numerical property suite for the drift field, the loss and every hand-written gradient."""

from __future__ import annotations

import typing

import numpy as np
import pandas as pd
import pydantic

from ..drift import drift_decomposed, drift_field, drift_multi_temperature, drift_unified
from ..encoder import FrozenEncoder
from ..exceptions import PropertyCheckError
from ..generator import Generator, draw_sigmas
from ..logging import get_logger
from ..metrics import mmd2
from ..reporting import write_csv, write_summary
from ..schemas import (
    Activation,
    CompressionConfig,
    EncoderSpec,
    ExperimentConfig,
    GeneratorConfig,
    KernelConfig,
    Paradigm,
    StftConfig,
    TrainConfig,
)
from ..settings import Settings
from ..signal import decompress_adjoint, decompress_array, istft_adjoint, istft_frames
from ..trainer import drift_loss, drift_targets
from .common import prepare_output

logger = get_logger()

TEMPERATURES = (0.1, 0.5, 1.0)
FD_STEP = 1e-5


class PropertyResult(pydantic.BaseModel):
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    trials: int


def _result(name: str, deviations: typing.Sequence[float], tolerance: float) -> PropertyResult:
    worst = float(max(deviations)) if len(deviations) else 0.0
    return PropertyResult(
        name=name,
        passed=bool(worst <= tolerance),
        max_deviation=worst,
        tolerance=tolerance,
        trials=len(deviations),
    )


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), float(np.linalg.norm(a)), 1e-300)
    return float(np.linalg.norm(a - b)) / scale


def _instance(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    dim = int(rng.integers(2, 17))
    pos = rng.standard_normal((int(rng.integers(1, 65)), dim))
    neg = rng.standard_normal((int(rng.integers(1, 65)), dim))
    query = rng.standard_normal(dim)
    return query, pos, neg, float(rng.choice(TEMPERATURES))


def check_oracle_equivalence(
    rng: np.random.Generator, trials: int = 1000, *, perturb: bool = False
) -> PropertyResult:
    deviations = []
    for _ in range(trials):
        query, pos, neg, tau = _instance(rng)
        unified = drift_unified(query, pos, neg, tau)
        if perturb:
            unified = unified * (1.0 + 1e-6)
        _, _, decomposed = drift_decomposed(query, pos, neg, tau)
        deviations.append(_relative(unified, decomposed))
    return _result('oracle_equivalence', deviations, 1e-10)


def check_equilibrium(rng: np.random.Generator, trials: int = 100) -> PropertyResult:
    """Multiset-equal positive and negative sets give an exactly zero field."""
    kernel = KernelConfig(temperatures=TEMPERATURES)
    deviations = []
    for _ in range(trials):
        query, pos, _, tau = _instance(rng)
        neg = pos[rng.permutation(pos.shape[0])]
        queries = rng.standard_normal((4, pos.shape[1]))
        field = drift_multi_temperature(queries, pos, neg, kernel)
        deviations.append(float(np.abs(field.vectors).max()))
        deviations.append(float(np.abs(drift_unified(query, pos, neg, tau)).max()))
    return _result('equilibrium_zero', deviations, 0.0)


def check_antisymmetry(rng: np.random.Generator, trials: int = 100) -> PropertyResult:
    deviations = []
    for _ in range(trials):
        query, pos, neg, tau = _instance(rng)
        forward, _, _ = drift_field(query, pos, neg, tau)
        swapped, _, _ = drift_field(query, neg, pos, tau)
        deviations.append(float(np.abs(forward + swapped).max()))
    return _result('antisymmetry', deviations, 1e-12)


def check_translation(rng: np.random.Generator, trials: int = 100) -> PropertyResult:
    deviations = []
    for _ in range(trials):
        query, pos, neg, tau = _instance(rng)
        shift = rng.uniform(-3, 3, size=query.shape)
        base = drift_unified(query, pos, neg, tau)
        moved = drift_unified(query + shift, pos + shift, neg + shift, tau)
        deviations.append(_relative(moved, base))
    return _result('translation_equivariance', deviations, 1e-9)


def check_scaling(rng: np.random.Generator, trials: int = 100) -> PropertyResult:
    deviations = []
    for _ in range(trials):
        query, pos, neg, tau = _instance(rng)
        scale = float(rng.uniform(0.25, 4.0))
        base = drift_unified(query, pos, neg, tau)
        scaled = drift_unified(scale * query, scale * pos, scale * neg, scale * tau)
        deviations.append(_relative(scaled, scale * base))
    return _result('joint_scaling', deviations, 1e-9)


def check_loss_identity(rng: np.random.Generator, trials: int = 20) -> PropertyResult:
    """The drift loss equals the mean squared drift magnitude."""
    cfg = TrainConfig(kernel=KernelConfig(temperatures=TEMPERATURES))
    deviations = []
    for _ in range(trials):
        dim = int(rng.integers(2, 9))
        generated = (rng.standard_normal((3, 5, dim)), rng.standard_normal((3, 5, dim + 1)))
        clean = (rng.standard_normal((2, 5, dim)), rng.standard_normal((2, 5, dim + 1)))
        targets, fields = drift_targets(generated, clean, cfg)
        loss, _ = drift_loss(generated, targets)
        expected = float(np.mean([np.mean(np.sum(f.vectors**2, axis=-1)) for f in fields]))
        deviations.append(abs(loss - expected))
    return _result('loss_identity', deviations, 1e-12)


def _directional(
    loss: typing.Callable[[np.ndarray], float], point: np.ndarray, direction: np.ndarray
) -> float:
    return (loss(point + FD_STEP * direction) - loss(point - FD_STEP * direction)) / (2 * FD_STEP)


def _fd_error(numeric: float, analytic: float) -> float:
    return abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)


def check_generator_gradient(rng: np.random.Generator, trials: int = 20) -> PropertyResult:
    deviations = []
    for trial in range(trials):
        paradigm = Paradigm.direct_mapping if trial % 2 == 0 else Paradigm.conditional
        config = GeneratorConfig(
            paradigm=paradigm,
            input_dim=6,
            hidden_dims=(8, 7),
            output_dim=6,
            condition_dim=0 if paradigm == Paradigm.direct_mapping else 3,
            activation=Activation.silu if trial % 4 < 2 else Activation.tanh,
            zero_init_output=False,
            seed=trial,
        )
        generator = Generator(config)
        inputs = rng.standard_normal((4, 6))
        condition = rng.standard_normal((4, 3)) if config.condition_dim else None
        cotangent = rng.standard_normal((4, 6))
        generator.forward(inputs, condition)
        grads = generator.backward(cotangent)

        for name in generator.params:
            original = generator.params[name]
            direction = rng.standard_normal(original.shape)

            def loss(values: np.ndarray, name: str = name, original=original) -> float:
                generator.params[name] = values
                value = float(np.sum(cotangent * generator.forward(inputs, condition)))
                generator.params[name] = original
                return value

            numeric = _directional(loss, original, direction)
            deviations.append(_fd_error(numeric, float(np.sum(grads[name] * direction))))
    return _result('generator_gradient', deviations, 1e-4)


def check_encoder_gradient(rng: np.random.Generator, trials: int = 20) -> PropertyResult:
    encoder = FrozenEncoder(EncoderSpec(layer_dims=(16, 16, 16), taps=(0, 1, 2), seed=7))
    deviations = []
    for _ in range(trials):
        samples = 0.1 * rng.standard_normal(2048)
        stack, cache = encoder.forward(samples)
        upstream = tuple(rng.standard_normal(layer.shape) for layer in stack.layers)
        gradient = encoder.backward(cache, upstream)

        def loss(values: np.ndarray) -> float:
            layers, _ = encoder.forward(values)
            return float(sum(np.sum(u * layer) for u, layer in zip(upstream, layers.layers)))

        direction = rng.standard_normal(samples.shape)
        deviations.append(_fd_error(_directional(loss, samples, direction), gradient @ direction))
    return _result('encoder_gradient', deviations, 1e-4)


def check_istft_adjoint(rng: np.random.Generator, trials: int = 20) -> PropertyResult:
    cfg = StftConfig(window_length=32, hop_length=8, fft_size=32)
    deviations = []
    for _ in range(trials):
        shape = (cfg.n_bins, 9)
        coefficients = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        cotangent = rng.standard_normal(istft_frames(coefficients, cfg).shape)
        adjoint = istft_adjoint(cotangent, cfg)
        direction = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        def loss(values: np.ndarray) -> float:
            return float(cotangent @ istft_frames(values, cfg))

        analytic = float(np.sum(adjoint.real * direction.real + adjoint.imag * direction.imag))
        deviations.append(_fd_error(_directional(loss, coefficients, direction), analytic))
    return _result('istft_adjoint', deviations, 1e-6)


def check_decompress_adjoint(rng: np.random.Generator, trials: int = 20) -> PropertyResult:
    cfg = CompressionConfig()
    deviations = []
    for _ in range(trials):
        z = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        cotangent = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        adjoint = decompress_adjoint(z, cotangent, cfg)
        direction = rng.standard_normal(12) + 1j * rng.standard_normal(12)

        def loss(values: np.ndarray) -> float:
            out = decompress_array(values, cfg)
            return float(np.sum(cotangent.real * out.real + cotangent.imag * out.imag))

        analytic = float(np.sum(adjoint.real * direction.real + adjoint.imag * direction.imag))
        deviations.append(_fd_error(_directional(loss, z, direction), analytic))
    return _result('decompress_adjoint', deviations, 1e-4)


def check_sampler_bounds(rng: np.random.Generator, draws: int = 100_000) -> PropertyResult:
    schedule = TrainConfig().sigma_schedule
    sigmas, _ = draw_sigmas(schedule, rng, draws)
    below = np.maximum(schedule.lo - sigmas, 0.0)
    above = np.maximum(sigmas - schedule.hi, 0.0)
    return _result('sigma_bounds', [float(max(below.max(), above.max()))], 0.0)


def check_mmd_symmetry(rng: np.random.Generator, trials: int = 50) -> PropertyResult:
    deviations = []
    for _ in range(trials):
        _, a, b, tau = _instance(rng)
        deviations.append(abs(mmd2(a, b, tau) - mmd2(b, a, tau)))
        deviations.append(abs(mmd2(a, a, tau)))
    return _result('mmd_symmetry', deviations, 1e-12)


def run_suite(seed: int, *, perturb: bool = False) -> list[PropertyResult]:
    rng = np.random.default_rng(seed)
    return [
        check_oracle_equivalence(rng, perturb=perturb),
        check_equilibrium(rng),
        check_antisymmetry(rng),
        check_translation(rng),
        check_scaling(rng),
        check_loss_identity(rng),
        check_generator_gradient(rng),
        check_encoder_gradient(rng),
        check_istft_adjoint(rng),
        check_decompress_adjoint(rng),
        check_sampler_bounds(rng),
        check_mmd_symmetry(rng),
    ]


def run_drift_eval(cfg: ExperimentConfig, *, settings: Settings | None = None, **_) -> dict:
    out_dir = prepare_output(cfg)
    results = run_suite(cfg.seed, perturb=cfg.perturb)
    for result in results:
        mark = '✅' if result.passed else '❌'
        logger.info(
            f'{mark} {result.name}: max deviation {result.max_deviation:.3e} '
            f'(tolerance {result.tolerance:.0e}, {result.trials:,} trials)'
        )
    frame = pd.DataFrame.from_records([result.model_dump() for result in results])
    write_csv(frame, out_dir / 'drift_eval.csv', settings=settings)
    failed = [result.name for result in results if not result.passed]
    summary = {
        'task': cfg.task.value,
        'seed': cfg.seed,
        'perturb': cfg.perturb,
        'passed': not failed,
        'failed': failed,
        'results': {result.name: result.model_dump() for result in results},
    }
    write_summary(out_dir / 'summary.json', summary)
    if failed:
        raise PropertyCheckError(f'{len(failed)} propert(ies) failed: {", ".join(failed)}')
    return summary
