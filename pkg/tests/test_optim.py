import numpy as np
import pytest

from drift_se.exceptions import ShapeMismatchError
from drift_se.optim import AdamState, adamw_update


def test_first_step_is_a_signed_learning_rate():
    params = {'w': np.array([1.0, -2.0, 0.5])}
    grads = {'w': np.array([0.3, -4.0, 1e-3])}
    updated, state = adamw_update(params, grads, AdamState(), lr=0.1, wd=0.0)
    # m_hat = g and v_hat = g^2 at t = 1
    expected = params['w'] - 0.1 * grads['w'] / (np.abs(grads['w']) + 1e-8)
    np.testing.assert_allclose(updated['w'], expected, rtol=1e-12)
    assert state.step == 1


def test_weight_decay_is_decoupled():
    params = {'w': np.array([2.0])}
    grads = {'w': np.array([0.0])}
    updated, state = adamw_update(params, grads, AdamState(), lr=0.1, wd=0.01)
    np.testing.assert_allclose(updated['w'], [2.0 * (1 - 0.1 * 0.01)])
    # the decay never enters the moments
    np.testing.assert_array_equal(state.m['w'], [0.0])
    np.testing.assert_array_equal(state.v['w'], [0.0])


def test_zero_gradient_without_decay_is_a_fixed_point():
    params = {'a': np.ones((2, 2)), 'b': np.zeros(3)}
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    state = AdamState()
    for _ in range(3):
        params, state = adamw_update(params, grads, state, lr=5e-4, wd=0.0)
    np.testing.assert_array_equal(params['a'], np.ones((2, 2)))
    np.testing.assert_array_equal(params['b'], np.zeros(3))


def test_moments_follow_the_exponential_averages():
    params = {'w': np.array([0.0])}
    state = AdamState()
    for g in (1.0, 2.0):
        params, state = adamw_update(params, {'w': np.array([g])}, state, lr=1e-3, wd=0.0)
    assert state.m['w'][0] == pytest.approx(0.9 * 0.1 * 1.0 + 0.1 * 2.0)
    assert state.v['w'][0] == pytest.approx(0.999 * 0.001 * 1.0 + 0.001 * 4.0)
    assert state.step == 2


def test_state_array_round_trip(rng):
    params = {'layer0.weight': rng.standard_normal((2, 2))}
    _, state = adamw_update(
        params, {'layer0.weight': rng.standard_normal((2, 2))}, AdamState(), lr=1e-3, wd=0.0
    )
    restored = AdamState.from_arrays(state.step, state.to_arrays())
    assert set(state.to_arrays()) == {'adam.m.layer0.weight', 'adam.v.layer0.weight'}
    np.testing.assert_array_equal(restored.m['layer0.weight'], state.m['layer0.weight'])
    np.testing.assert_array_equal(restored.v['layer0.weight'], state.v['layer0.weight'])


def test_gradient_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        adamw_update({'w': np.zeros(2)}, {'w': np.zeros(3)}, AdamState(), lr=1e-3, wd=0.0)


def reference_adamw(param, grads, *, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar-loop AdamW, one element and one step at a time."""
    param = np.array(param, dtype=np.float64)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    for t, grad in enumerate(grads, start=1):
        for i in range(param.size):
            m.flat[i] = beta1 * m.flat[i] + (1 - beta1) * grad.flat[i]
            v.flat[i] = beta2 * v.flat[i] + (1 - beta2) * grad.flat[i] ** 2
            m_hat = m.flat[i] / (1 - beta1**t)
            v_hat = v.flat[i] / (1 - beta2**t)
            param.flat[i] -= lr * wd * param.flat[i]
            param.flat[i] -= lr * m_hat / (v_hat**0.5 + eps)
    return param


def test_hundred_steps_match_a_scalar_reference(rng):
    start = rng.standard_normal((3, 4))
    grads = [rng.standard_normal((3, 4)) for _ in range(100)]
    params, state = {'w': start.copy()}, AdamState()
    for grad in grads:
        params, state = adamw_update(params, {'w': grad}, state, lr=1e-2, wd=0.05)
    expected = reference_adamw(start, grads, lr=1e-2, wd=0.05)
    np.testing.assert_allclose(params['w'], expected, rtol=1e-12, atol=1e-14)
    assert state.step == 100
