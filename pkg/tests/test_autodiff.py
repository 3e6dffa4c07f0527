import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xdistill.autodiff import GradTape, Tensor, backward, finite_difference_check, no_grad, ops, tensor
from xdistill.autodiff import ops as ops_module
from xdistill.autodiff.gradcheck import relative_error
from xdistill.autodiff.tensor import current_tape

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# construction


def test_tensor_fill_broadcasts_scalar():
    t = tensor([2, 3], fill=0.0)
    assert t.shape == (2, 3)
    assert np.all(t.data == 0.0)


def test_tensor_rejects_zero_dimension():
    with pytest.raises(ValueError):
        tensor([0, 3])


def test_tensor_rejects_fill_count_mismatch():
    with pytest.raises(ValueError):
        tensor([2, 2], fill=[1.0, 2.0, 3.0])


# elementwise ops


def test_add_then_backward_gives_ones():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    backward(ops.sum(a + b))
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [1.0, 1.0])


def test_mul_gradient_is_other_operand():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    backward(ops.sum(a * b))
    assert np.array_equal(a.grad, [3.0, 4.0])
    assert np.array_equal(b.grad, [1.0, 2.0])


def test_mismatched_shapes_raise():
    with pytest.raises(ValueError):
        ops.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_exp_of_large_input_overflows_to_inf():
    with np.errstate(over="ignore"):
        y = ops.exp(Tensor(np.array([1000.0])))
    assert np.isinf(y.data[0])


def test_log_of_nonpositive_input_raises():
    with pytest.raises(ValueError):
        ops.log(Tensor(np.array([1.0, 0.0])))


def test_sigmoid_is_stable_at_extremes():
    y = ops.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert np.all(np.isfinite(y))
    assert y[1] == 0.5
    assert y[0] == 0.0 and y[2] == 1.0


def test_log_sigmoid_matches_direct_formula(rng):
    x = rng.normal(size=20) * 3
    assert np.allclose(ops.log_sigmoid(Tensor(x)).data, -np.log1p(np.exp(-x)), atol=1e-14)
    assert np.isfinite(ops.log_sigmoid(Tensor(np.array([-800.0]))).data).all()


def test_maximum_routes_tie_gradient_to_first():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 3.0]), requires_grad=True)
    backward(ops.sum(ops.maximum(a, b)))
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])


# linear algebra


def test_matmul_shape_contract():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 4)))
    assert ops.matmul(a, b).shape == (2, 4)
    with pytest.raises(ValueError):
        ops.matmul(b, b)


@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       arrays(np.float64, (4, 2), elements=finite))
def test_matmul_is_associative(a, b, c):
    A, B, C = Tensor(a), Tensor(b), Tensor(c)
    left = ops.matmul(ops.matmul(A, B), C).data
    right = ops.matmul(A, ops.matmul(B, C)).data
    assert np.allclose(left, right, atol=1e-9)


def test_head_matmul_is_block_diagonal(rng):
    h = rng.normal(size=(3, 2 * 4))
    r = rng.normal(size=(2, 4, 4))
    out = ops.head_matmul(Tensor(h), Tensor(r)).data
    dense = np.zeros((8, 8))
    dense[:4, :4] = r[0]
    dense[4:, 4:] = r[1]
    assert np.allclose(out, h @ dense, atol=1e-14)


# softmax family


@given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)), st.floats(0.1, 10))
def test_softmax_rows_sum_to_one(x, temp):
    p = ops.softmax_rows(Tensor(x), temp).data
    assert np.allclose(p.sum(-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


@given(arrays(np.float64, (2, 5), elements=st.floats(-20, 20)), st.floats(-100, 100))
def test_log_softmax_is_shift_invariant(x, c):
    a = ops.log_softmax_rows(Tensor(x)).data
    b = ops.log_softmax_rows(Tensor(x + c)).data
    assert np.allclose(a, b, atol=1e-9)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        ops.softmax_rows(Tensor(np.zeros((1, 3))), 0.0)


def test_uniform_log_softmax_is_minus_log_v():
    v = 37
    out = ops.log_softmax_rows(Tensor(np.zeros((4, v)))).data
    assert np.allclose(out, -math.log(v), atol=1e-15)


def test_masked_row_with_neg_inf_gets_zero_weight():
    x = Tensor(np.array([[0.0, -np.inf, 1.0]]))
    p = ops.softmax_rows(x).data
    assert p[0, 1] == 0.0
    assert math.isclose(p.sum(), 1.0)


# tape semantics


def test_second_backward_raises():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ops.sum(a * a)
    backward(loss)
    with pytest.raises(RuntimeError, match="twice"):
        backward(loss)


def test_backward_requires_scalar():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(ValueError):
        backward(a * a)


def test_backward_starts_fresh_tape():
    a = Tensor(np.array([1.0]), requires_grad=True)
    before = current_tape()
    backward(ops.sum(a * a))
    after = current_tape()
    assert after is not before
    assert isinstance(after, GradTape)
    assert after.nodes == []


def test_no_grad_records_nothing():
    a = Tensor(np.array([1.0]), requires_grad=True)
    tape = current_tape()
    n0 = len(tape.nodes)
    with no_grad():
        ops.exp(a * a)
    assert len(current_tape().nodes) == n0


def test_gradients_accumulate_across_uses():
    a = Tensor(np.array([3.0]), requires_grad=True)
    backward(ops.sum(a * a + a))
    assert np.array_equal(a.grad, [7.0])


def test_getitem_gradient_scatters_into_slice():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ops.sum(a[1]))
    assert np.array_equal(a.grad, [[0, 0, 0], [1, 1, 1]])


def test_take_rows_accumulates_repeated_ids():
    w = Tensor(np.ones((4, 2)), requires_grad=True)
    backward(ops.sum(ops.take_rows(w, np.array([[1, 1, 3]]))))
    assert np.array_equal(w.grad[:, 0], [0, 2, 0, 1])


def test_frobenius_norm_subgradient_at_zero_is_zero():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    backward(ops.frobenius_norm(x))
    assert np.array_equal(x.grad, np.zeros((2, 3)))


# finite differences


@pytest.mark.parametrize(
    "fn",
    [ops.exp, ops.tanh, ops.sigmoid, ops.log_sigmoid, ops.gelu, ops.square, ops.abs],
    ids=["exp", "tanh", "sigmoid", "log_sigmoid", "gelu", "square", "abs"],
)
def test_unary_gradients_match_finite_differences(fn, rng):
    x = Tensor(rng.uniform(0.2, 1.5, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 4)))
    assert finite_difference_check(lambda: ops.sum(fn(x) * w), [x]).passed


def test_composite_gradients_match_finite_differences(rng):
    x = param(rng, 2, 3, 5)
    g = param(rng, 5)
    b = param(rng, 5)
    w = param(rng, 5, 4)
    r = Tensor(rng.normal(size=(2, 3, 4)))

    def f():
        y = ops.layer_norm(x, g, b)
        z = ops.softmax_rows(ops.linear(y, w), 1.3)
        return ops.sum(ops.log(z) * r) + ops.frobenius_norm(y, axis=(1, 2)).sum()

    report = finite_difference_check(f, [x, g, b, w])
    assert report.passed, report.max_rel_err


def test_broadcast_concat_stack_transpose_gradients(rng):
    a = param(rng, 1, 4)
    b = param(rng, 3, 4)
    r = Tensor(rng.normal(size=(8, 3)))

    def f():
        c = ops.concat([ops.broadcast_to(a, (3, 4)), b], axis=-1)
        s = ops.stack([c, c * c], axis=0)
        return ops.sum(ops.transpose(ops.mean(s, axis=0), (1, 0)) * r)

    assert finite_difference_check(f, [a, b]).passed


def test_corrupted_rule_fails_gradcheck(rng, monkeypatch):
    x = param(rng, 4)
    good = ops_module.UNARY_RULES["tanh"]
    monkeypatch.setitem(ops_module.UNARY_RULES, "tanh", (good[0], lambda x, y: 2.0 * (1.0 - y * y)))
    assert not finite_difference_check(lambda: ops.sum(ops.tanh(x)), [x]).passed


def test_relative_error_uses_floor_for_zero_gradients():
    err = relative_error(np.array([0.0, 1e-12]), np.array([0.0, 0.0]))
    assert err[0] == 0.0
    assert err[1] == pytest.approx(1e-4)
