"""Core autodiff engine: forward values, backward gradients, error paths."""

import numpy as np
import pytest

import uqtrain.tensor as T
from uqtrain.errors import (
    ContractError,
    DegenerateDenominator,
    DomainError,
    ShapeError,
)


def test_relu_forward_values():
    out = T.relu(T.constant([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.values, [0.0, 0.0, 2.0])


def test_matmul_identity_returns_operand():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 5))
    out = T.matmul(T.constant(np.eye(3)), T.constant(a))
    np.testing.assert_allclose(out.values, a, atol=1e-15)


def test_conv2d_matches_nested_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    out = T.conv2d(T.constant(x), T.constant(k), padding=1).values

    expect = np.zeros((1, 3, 5, 5))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for b in range(1):
        for o in range(3):
            for i in range(5):
                for j in range(5):
                    acc = 0.0
                    for c in range(2):
                        for u in range(3):
                            for v in range(3):
                                acc += xp[b, c, i + u, j + v] * k[o, c, u, v]
                    expect[b, o, i, j] = acc
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_backward_sum_gives_ones():
    x = T.parameter(np.arange(4.0).reshape(2, 2))
    with T.Tape() as tape:
        loss = T.total_sum(x)
    T.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_backward_half_square_gives_input():
    vals = np.array([[1.0, -2.0], [3.0, 0.5]])
    x = T.parameter(vals)
    with T.Tape() as tape:
        loss = T.scalar_mul(0.5, T.total_sum(T.mul(x, x)))
    T.backward(loss, tape)
    np.testing.assert_allclose(x.grad, vals, atol=1e-15)


def test_backward_three_layer_composition_matches_fd():
    rng = np.random.default_rng(2)
    arrays = [T.parameter(rng.standard_normal((5, 4))),
              T.parameter(rng.standard_normal((4, 6))),
              T.parameter(rng.standard_normal((6, 3)))]

    def f(ars):
        x, w1, w2 = ars
        h = T.relu(T.matmul(x, w1))
        return T.total_sum(T.softplus(T.matmul(h, w2)))

    assert T.check_gradients(f, arrays) < 1e-4


def test_backward_requires_scalar_loss():
    x = T.parameter(np.ones(3))
    with T.Tape() as tape:
        out = T.mul(x, x)
    with pytest.raises(ContractError):
        T.backward(out, tape)


def test_gradient_of_loss_wrt_itself_is_one():
    x = T.parameter(np.array(2.0))
    with T.Tape() as tape:
        loss = T.mul(x, x)
    T.backward(loss, tape)
    assert float(loss.grad) == 1.0


def test_grad_accumulates_when_node_reused():
    x = T.parameter(np.array([3.0]))
    with T.Tape() as tape:
        loss = T.total_sum(T.add(T.mul(x, x), T.mul(x, x)))
    T.backward(loss, tape)
    np.testing.assert_allclose(x.grad, [12.0])


def test_untouched_parameter_gets_zero_grad():
    x = T.parameter(np.array([1.0, 2.0]))
    unused = T.parameter(np.array([5.0]))
    with T.Tape() as tape:
        loss = T.total_sum(x)
        _ = T.mul(unused, unused)
    T.backward(loss, tape)
    np.testing.assert_array_equal(unused.grad, [0.0])


def test_div_raises_on_tiny_denominator():
    with pytest.raises(DegenerateDenominator):
        T.div(T.constant([1.0]), T.constant([1e-13]))


def test_log_and_sqrt_domain_errors():
    with pytest.raises(DomainError):
        T.log(T.constant([0.0]))
    with pytest.raises(DomainError):
        T.sqrt(T.constant([-1.0]))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((4, 2))))


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        T.add(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 4))))


def test_broadcast_add_and_unbroadcast_grad():
    x = T.parameter(np.ones((3, 4)))
    b = T.parameter(np.arange(4.0))
    with T.Tape() as tape:
        loss = T.total_sum(T.add(x, b))
    T.backward(loss, tape)
    np.testing.assert_array_equal(b.grad, [3.0, 3.0, 3.0, 3.0])


def test_spatial_std_population_convention():
    x = T.constant(np.array([0.0, 2.0]).reshape(1, 1, 1, 2))
    np.testing.assert_allclose(T.spatial_std(x).values, [[1.0]], atol=1e-9)


def test_batch_std_population_convention():
    x = T.constant(np.array([[0.0], [2.0]]))
    np.testing.assert_allclose(T.batch_std(x).values, [1.0], atol=1e-9)


def test_take_rows_scatter_handles_duplicates():
    x = T.parameter(np.array([[1.0], [2.0], [3.0]]))
    with T.Tape() as tape:
        picked = T.take_rows(x, np.array([0, 0, 2]))
        loss = T.total_sum(picked)
    T.backward(loss, tape)
    np.testing.assert_array_equal(x.grad, [[2.0], [0.0], [1.0]])


def test_max_pool2_routes_gradient_to_first_max():
    vals = np.array([[5.0, 5.0], [1.0, 2.0]]).reshape(1, 1, 2, 2)
    x = T.parameter(vals)
    with T.Tape() as tape:
        loss = T.total_sum(T.max_pool2(x))
    T.backward(loss, tape)
    np.testing.assert_array_equal(
        x.grad.reshape(2, 2), [[1.0, 0.0], [0.0, 0.0]])


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3, 4, 4))
    k = rng.standard_normal((2, 3, 3, 3))
    a = T.conv2d(T.constant(x), T.constant(k), padding=1).values
    b = T.conv2d(T.constant(x), T.constant(k), padding=1).values
    assert a.tobytes() == b.tobytes()


def test_forward_op_dispatch_and_unknown_kind():
    out = T.forward_op("relu", [T.constant([-1.0, 1.0])])
    np.testing.assert_array_equal(out.values, [0.0, 1.0])
    with pytest.raises(ContractError):
        T.forward_op("fft", [T.constant([1.0])])


def test_ops_registry_is_complete():
    expected = {"add", "sub", "mul", "div", "scalar_mul", "relu", "exp",
                "log", "sqrt", "softplus", "matmul", "transpose", "reshape",
                "take_rows", "sum", "row_sum", "spatial_mean", "spatial_std",
                "batch_mean", "batch_std", "conv2d", "max_pool2", "l2_norm",
                "cosine_sim", "log_softmax"}
    assert expected <= set(T.OPS)


def test_log_softmax_is_lse_stable():
    x = T.constant(np.array([[1000.0, 1000.0, 1000.0]]))
    out = T.log_softmax(x).values
    np.testing.assert_allclose(out, np.log(np.ones((1, 3)) / 3), atol=1e-12)


def test_conv2d_rejects_nonsquare_kernel_and_stride_assumptions():
    x = T.constant(np.ones((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        T.conv2d(x, T.constant(np.ones((1, 1, 2, 3))))


def test_cosine_sim_matches_closed_form():
    a = np.array([[1.0, 0.0]])
    b = np.array([[1.0, 1.0]])
    out = T.cosine_sim(T.constant(a), T.constant(b)).values
    np.testing.assert_allclose(out, [1 / np.sqrt(2)], rtol=1e-9)
