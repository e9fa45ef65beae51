import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lcmlora.errors import ContractError, DimensionError, OracleError
from lcmlora.tensor import (Tensor, finite_diff_check, finite_diff_errors, gather_rows, grad_backward,
                            huber_loss, matmul, mse_loss, no_grad, silu, tanh)


def test_matmul_reference_values():
    a = Tensor([[1, 2], [3, 4]])
    b = Tensor([[5, 6], [7, 8]])
    np.testing.assert_array_equal(matmul(a, b).data, [[19, 22], [43, 50]])


def test_matmul_identity_and_zero(rng):
    a = Tensor(rng.standard_normal((4, 3)))
    np.testing.assert_array_equal(matmul(a, Tensor(np.eye(3))).data, a.data)
    np.testing.assert_array_equal(matmul(Tensor(np.zeros((2, 4))), a).data, np.zeros((2, 3)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_associativity(rng):
    for _ in range(20):
        a, b, c = (Tensor(rng.standard_normal(s)) for s in ((4, 5), (5, 3), (3, 6)))
        left = matmul(matmul(a, b), c).data.astype(np.float64)
        right = matmul(a, matmul(b, c)).data.astype(np.float64)
        assert np.linalg.norm(left - right) <= 1e-5 * np.linalg.norm(left)


def test_grad_of_sum_is_ones():
    w = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    grad_backward(w.sum(), [w])
    np.testing.assert_array_equal(w.grad, np.ones((2, 2)))


def test_grad_of_half_square_is_w(rng):
    w = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    grad_backward((w * w).sum() * 0.5, [w])
    np.testing.assert_allclose(w.grad, w.data, rtol=1e-6)


def test_non_scalar_loss_is_contract_error():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        grad_backward(w * 2.0, [w])


def test_unreachable_parameter_gets_zero_grad():
    w = Tensor(np.ones(3), requires_grad=True)
    u = Tensor(np.ones(3), requires_grad=True)
    grad_backward(w.sum(), [w, u])
    np.testing.assert_array_equal(u.grad, 0.0)


def test_detached_graph_gives_zero_grads_not_error():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        loss = (w * w).sum()
    grad_backward(loss, [w])
    np.testing.assert_array_equal(w.grad, 0.0)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    grad_backward((y + y).sum(), [x])
    assert x.grad[0] == pytest.approx(12.0)


def test_bias_broadcast_gradient(rng):
    x = Tensor(rng.standard_normal((5, 3)))
    b = Tensor(np.zeros(3), requires_grad=True)
    grad_backward((x + b).sum(), [b])
    np.testing.assert_allclose(b.grad, [5, 5, 5])


def test_broadcasting_beyond_2d_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4, 2, 3)))


def test_gather_rows_scatter_adds():
    table = Tensor(np.zeros((3, 2)), requires_grad=True)
    out = gather_rows(table, [0, 2, 0])
    grad_backward(out.sum(), [table])
    np.testing.assert_array_equal(table.grad, [[2, 2], [0, 0], [1, 1]])
    with pytest.raises(IndexError):
        gather_rows(table, [3])


def test_finite_diff_linear_and_quadratic(rng):
    p = [Tensor(rng.standard_normal((3, 2)))]
    assert finite_diff_check(lambda ps: ps[0].sum(), p) <= 1e-6
    m = rng.standard_normal((3, 3))
    q = m @ m.T
    v = [Tensor(rng.standard_normal((1, 3)))]
    assert finite_diff_check(lambda ps: matmul(matmul(ps[0], Tensor(q)), ps[0].T).sum(), v) <= 1e-5


def _mlp_loss(x, y):
    def f(ps):
        h = silu(matmul(x, ps["w1"]) + ps["b1"])
        h = tanh(matmul(h, ps["w2"]))
        return mse_loss(h, y)
    return f


def test_finite_diff_random_mlp(rng):
    x = Tensor(rng.standard_normal((6, 3)).astype(np.float64))
    y = Tensor(rng.standard_normal((6, 2)).astype(np.float64))
    params = {"w1": Tensor(rng.standard_normal((3, 5))), "b1": Tensor(rng.standard_normal(5)),
              "w2": Tensor(rng.standard_normal((5, 2)))}
    assert finite_diff_check(_mlp_loss(x, y), params) <= 1e-4


def test_finite_diff_detects_nondeterminism():
    counter = iter(range(10**6))
    with pytest.raises(OracleError):
        finite_diff_errors(lambda ps: ps[0].sum() + float(next(counter)), [Tensor(np.ones(2))])


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_check(lambda ps: ps[0].sum(), [Tensor(np.ones(2))], h=0.0)


def test_huber_loss_grad(backend, rng):
    a = Tensor(rng.standard_normal((4, 3)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 3)).astype(np.float32))
    grad_backward(huber_loss(a, b, 0.3), [a])
    expected = np.clip(a.data - b.data, -0.3, 0.3) / a.data.size
    np.testing.assert_allclose(a.grad, expected, rtol=1e-5)


def test_float32_default_and_float64_preserved():
    assert Tensor([1, 2]).dtype == np.float32
    t = Tensor(np.array([1.0, 2.0]))
    assert (t * t).dtype == np.float64


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
def test_matmul_grad_property(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    grad_backward(matmul(ta, tb).sum(), [ta, tb])
    np.testing.assert_allclose(ta.grad, np.ones((3, 2)) @ b.T, atol=1e-9)
    np.testing.assert_allclose(tb.grad, a.T @ np.ones((3, 2)), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, 16, elements=st.floats(-30, 30, width=32)))
def test_silu_finite_on_finite_inputs(x):
    assert np.all(np.isfinite(silu(Tensor(x)).data))
