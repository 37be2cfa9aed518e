"""Kernel mean-shift drifting field.

The field at a query x combines attraction toward positives and repulsion from
negatives::

    V(x) = sum_i k(x, y+_i) y+_i / Z_p - sum_j k(x, y-_j) y-_j / Z_q

with the exponential kernel ``k(x, y) = exp(-||x - y||_2 / tau)``. Reference sets are
put in a canonical (lexicographic) row order before any summation so the result only
depends on the multisets of points, which makes ``pos == neg`` cancel to an exact zero.
"""

from __future__ import annotations

import typing

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import EmptyBatchError, ShapeMismatchError
from .logging import get_logger
from .models import DriftField, LatentBatch, as_finite
from .schemas import KernelConfig

logger = get_logger()

NORMALIZER_FLOOR = 1e-300

Points = typing.Union[LatentBatch, np.ndarray, typing.Sequence[typing.Sequence[float]]]


def _as_points(batch: Points, name: str) -> np.ndarray:
    points = batch.points if isinstance(batch, LatentBatch) else as_finite(batch)
    if points.ndim == 1:
        points = points[np.newaxis, :]
    if points.ndim != 2:
        raise ShapeMismatchError(f'{name} must be a (n, d) array, got shape {points.shape}')
    if points.shape[0] == 0:
        raise EmptyBatchError(f'{name} batch is empty')
    return points


def _check_dims(*arrays: np.ndarray) -> int:
    dims = {array.shape[-1] for array in arrays}
    if len(dims) != 1:
        raise ShapeMismatchError(f'latent dimensions disagree: {sorted(dims)}')
    return dims.pop()


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f'temperature must be positive and finite, got {tau}')
    return tau


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Row permutation sorting points lexicographically (first coordinate major)."""
    return np.lexsort(points.T[::-1])


def kernel_eval(x: typing.Sequence[float], y: typing.Sequence[float], tau: float) -> float:
    """Exponential similarity ``exp(-||x - y||_2 / tau)``, a value in (0, 1]."""
    x = as_finite(x, ndim=1)
    y = as_finite(y, ndim=1)
    _check_dims(x, y)
    tau = _check_tau(tau)
    return float(np.exp(-np.linalg.norm(x - y) / tau))


def _normalized_weights(
    log_weights: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Turn log-kernel rows into weights that sum to one.

    Returns the normalized weights, the raw normalizer and its logarithm per row. Rows
    whose raw normalizer falls below ``NORMALIZER_FLOOR`` are rescaled by their max
    log-weight first; the ratio is unchanged by a common factor.
    """
    raw = np.exp(log_weights)
    normalizer = raw.sum(axis=-1)
    underflow = normalizer < NORMALIZER_FLOOR
    if np.any(underflow):
        shift = np.where(underflow, log_weights.max(axis=-1), 0.0)
        raw = np.exp(log_weights - shift[..., np.newaxis])
        shifted = raw.sum(axis=-1)
        log_normalizer = np.log(shifted) + shift
        logger.debug(f'🔬 Rescaled {int(underflow.sum()):,} underflowing kernel normalizer(s)')
    else:
        shifted = normalizer
        log_normalizer = np.log(normalizer)
    return raw / shifted[..., np.newaxis], normalizer, log_normalizer


def _log_kernel(queries: np.ndarray, points: np.ndarray, tau: float) -> np.ndarray:
    if queries.ndim == 1:
        return -cdist(queries[np.newaxis, :], points)[0] / tau
    return -cdist(queries, points) / tau


def drift_decomposed(
    query: typing.Sequence[float], pos: Points, neg: Points, tau: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Attraction, repulsion and total drift at a single query.

    Returns
    -------
    (V_plus, V_minus, V): tuple of np.ndarray
        Kernel-weighted mean shifts toward ``pos`` and ``neg`` and their difference.
    """
    query = as_finite(query, ndim=1)
    pos = _as_points(pos, 'positive')
    neg = _as_points(neg, 'negative')
    _check_dims(query, pos, neg)
    tau = _check_tau(tau)

    pos = pos[canonical_order(pos)]
    neg = neg[canonical_order(neg)]
    w_pos, _, _ = _normalized_weights(_log_kernel(query, pos, tau))
    w_neg, _, _ = _normalized_weights(_log_kernel(query, neg, tau))

    v_plus = w_pos @ (pos - query)
    v_minus = w_neg @ (neg - query)
    return v_plus, v_minus, v_plus - v_minus


def _paired_sum(terms: np.ndarray) -> np.ndarray:
    """Sum an (n, m, d) block so that entry (i, j) is always added to entry (j, i) first."""
    n, m = terms.shape[:2]
    k = min(n, m)
    diagonal = np.arange(k)
    rows, cols = np.triu_indices(k, 1)
    total = terms[diagonal, diagonal].sum(axis=0)
    total = total + (terms[rows, cols] + terms[cols, rows]).sum(axis=0)
    total = total + terms[k:, :].sum(axis=(0, 1)) + terms[:k, k:].sum(axis=(0, 1))
    return total


def drift_unified(
    query: typing.Sequence[float], pos: Points, neg: Points, tau: float
) -> np.ndarray:
    """Joint double-sum form of the drift, where the ``-x`` terms have cancelled.

    ``V = 1/(Z_p Z_q) sum_i sum_j k(x, y+_i) k(x, y-_j) (y+_i - y-_j)``
    """
    query = as_finite(query, ndim=1)
    pos = _as_points(pos, 'positive')
    neg = _as_points(neg, 'negative')
    _check_dims(query, pos, neg)
    tau = _check_tau(tau)

    pos = pos[canonical_order(pos)]
    neg = neg[canonical_order(neg)]
    w_pos, _, _ = _normalized_weights(_log_kernel(query, pos, tau))
    w_neg, _, _ = _normalized_weights(_log_kernel(query, neg, tau))

    pair_weights = np.multiply.outer(w_pos, w_neg)
    differences = pos[:, np.newaxis, :] - neg[np.newaxis, :, :]
    return _paired_sum(pair_weights[..., np.newaxis] * differences)


def drift_field(
    queries: Points,
    pos: Points,
    neg: Points,
    tau: float,
    *,
    include_self: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drift for every query at one temperature.

    With ``include_self=False`` the queries are taken to be the negatives themselves
    (``queries[i]`` is ``neg[i]``) and each query is left out of its own repulsion sum.

    Returns
    -------
    vectors : np.ndarray
        (Q, d) drift vectors.
    normalizers : np.ndarray
        (Q, 2) raw (Z_p, Z_q).
    log_normalizers : np.ndarray
        (Q, 2) log (Z_p, Z_q), finite even when the raw normalizer underflows.
    """
    queries = _as_points(queries, 'query')
    pos = _as_points(pos, 'positive')
    neg = _as_points(neg, 'negative')
    _check_dims(queries, pos, neg)
    tau = _check_tau(tau)

    pos_order = canonical_order(pos)
    neg_order = canonical_order(neg)
    pos = pos[pos_order]
    neg = neg[neg_order]

    log_pos = _log_kernel(queries, pos, tau)
    log_neg = _log_kernel(queries, neg, tau)
    if not include_self:
        if queries.shape != neg.shape:
            raise ShapeMismatchError('self exclusion needs the queries to be the negatives')
        if neg.shape[0] < 2:
            raise EmptyBatchError('excluding the query leaves no negatives')
        sorted_position = np.argsort(neg_order)
        log_neg[np.arange(queries.shape[0]), sorted_position] = -np.inf

    w_pos, z_pos, log_z_pos = _normalized_weights(log_pos)
    w_neg, z_neg, log_z_neg = _normalized_weights(log_neg)

    vectors = w_pos @ pos - w_neg @ neg
    normalizers = np.stack([z_pos, z_neg], axis=-1)
    log_normalizers = np.stack([log_z_pos, log_z_neg], axis=-1)
    return vectors, normalizers, log_normalizers


def drift_multi_temperature(
    queries: Points,
    pos: Points,
    neg: Points,
    cfg: KernelConfig,
    *,
    include_self: bool = True,
) -> DriftField:
    """Average of the per-temperature fields, normalized separately for each tau."""
    components, normalizers, log_normalizers = [], [], []
    for tau in cfg.temperatures:
        vectors, z, log_z = drift_field(queries, pos, neg, tau, include_self=include_self)
        components.append(vectors)
        normalizers.append(z)
        log_normalizers.append(log_z)

    per_temperature = np.stack(components)
    return DriftField(
        vectors=per_temperature.mean(axis=0),
        temperatures=cfg.temperatures,
        per_temperature=per_temperature,
        normalizers=np.stack(normalizers),
        log_normalizers=np.stack(log_normalizers),
    )


def mean_drift_norm(field: DriftField | np.ndarray) -> float:
    vectors = field.vectors if isinstance(field, DriftField) else np.asarray(field)
    return float(np.linalg.norm(vectors, axis=-1).mean())
