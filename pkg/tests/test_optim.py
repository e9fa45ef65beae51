import numpy as np
import pytest

from lcmlora.optim import AdamState, OptimizerError, adam_step
from lcmlora.tensor import Tensor, grad_backward


def _params(**arrays):
    return {k: Tensor(np.asarray(v, np.float32), requires_grad=True) for k, v in arrays.items()}


def test_zero_gradient_decays_moments(backend):
    p = _params(w=[1.0, -2.0])
    state = AdamState.for_params(p)
    state.first_moment["w"][:] = 1.0
    state.second_moment["w"][:] = 1.0
    before = p["w"].data.astype(np.float64)
    adam_step(p, state, {"w": np.zeros(2, np.float32)})
    np.testing.assert_allclose(state.first_moment["w"], 0.9)
    np.testing.assert_allclose(state.second_moment["w"], 0.999)
    m_hat, v_hat = 0.9 / 0.1, 0.999 / 0.001
    np.testing.assert_allclose(p["w"].data, before - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=1e-6)


def test_zero_gradient_from_zero_state_leaves_params(backend):
    p = _params(w=[1.0, -2.0])
    state = AdamState.for_params(p)
    for _ in range(5):
        adam_step(p, state, {"w": np.zeros(2, np.float32)})
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.step_count == 5


def test_first_step_magnitude_is_lr(backend):
    p = _params(w=np.zeros(4))
    state = AdamState.for_params(p, lr=0.01)
    adam_step(p, state, {"w": np.full(4, 3.7, np.float32)})
    np.testing.assert_allclose(np.abs(p["w"].data), 0.01, rtol=1e-5)


def test_descends_quadratic(backend):
    p = _params(w=[1.0])
    state = AdamState.for_params(p, lr=0.1)
    trace = []
    for _ in range(100):
        w = p["w"]
        grad_backward((w * w).sum(), p)
        adam_step(p, state)
        trace.append(abs(float(w.data[0])))
    assert trace[-1] < 0.2
    assert all(b <= a + 1e-6 for a, b in zip(trace[:8], trace[1:9]))


def test_nan_gradient_names_parameter(backend):
    p = _params(alpha=[1.0], beta=[1.0])
    state = AdamState.for_params(p)
    with pytest.raises(OptimizerError, match="beta"):
        adam_step(p, state, {"alpha": np.zeros(1, np.float32), "beta": np.array([np.nan], np.float32)})
    assert state.step_count == 0


def test_step_count_increments():
    p = _params(w=[0.0])
    state = AdamState.for_params(p)
    for i in range(3):
        adam_step(p, state, {"w": np.ones(1, np.float32)})
        assert state.step_count == i + 1
