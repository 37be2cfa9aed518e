"""AdamW with decoupled weight decay over dicts of named numpy parameters."""

from __future__ import annotations

import dataclasses

import numpy as np

from .exceptions import ShapeMismatchError


@dataclasses.dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)
    v: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {f'adam.m.{name}': value for name, value in self.m.items()}
        arrays.update({f'adam.v.{name}': value for name, value in self.v.items()})
        return arrays

    @classmethod
    def from_arrays(cls, step: int, arrays: dict[str, np.ndarray]) -> AdamState:
        state = cls(step=step)
        for key, value in arrays.items():
            kind, _, name = key.removeprefix('adam.').partition('.')
            if kind == 'm':
                state.m[name] = value
            elif kind == 'v':
                state.v[name] = value
        return state


def adamw_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    wd: float,
    *,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One AdamW step.

    The weight decay shrinks each parameter by ``(1 - lr * wd)`` before the Adam step
    and never enters the moment estimates::

        m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
        p = p (1 - lr wd) - lr * m_hat / (sqrt(v_hat) + eps)
    """
    beta1, beta2 = betas
    step = state.step + 1
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step

    new_params, new_m, new_v = {}, {}, {}
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeMismatchError(f'gradient for {name} has shape {grad.shape}')
        m = beta1 * state.m.get(name, np.zeros_like(param)) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, np.zeros_like(param)) + (1.0 - beta2) * grad**2
        m_hat = m / bias1
        v_hat = v / bias2
        decayed = param * (1.0 - lr * wd) if wd else param
        new_params[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v

    return new_params, AdamState(step=step, m=new_m, v=new_v)
