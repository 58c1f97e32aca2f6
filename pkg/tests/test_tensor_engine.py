import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import DataError, DimensionError
from utils.sequence_branches import LstmCell, lstm_cell_forward
from utils.tensor_engine import (
    ComputeTape, Linear, Module, Tensor, add, backward, concat, cross_entropy, gradient_check, l2_normalize_rows,
    leaky_relu, log_softmax, lstm_sequence, masked_softmax, matmul, max_over, mean, mul, parameter, relu,
    reshape, sigmoid, sum_, take, tanh, unfold1d,
)

SEEDS = range(10)
TOL = 1e-5


def _param(rng, *shape):
    return parameter(rng.normal(size=shape))


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_elementwise_chain(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 4, 3)
    w = _param(rng, 3, 2)
    b = _param(rng, 2)

    def loss():
        z = add(matmul(x, w), b)
        return sum_(mul(tanh(z), sigmoid(z)))

    assert gradient_check(loss, [x, w, b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = _param(rng, 5, 3)
    targets = rng.integers(0, 3, size=5)
    assert gradient_check(lambda: cross_entropy(log_softmax(logits, axis=1), targets), [logits]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_lstm_sequence(seed):
    rng = np.random.default_rng(seed)
    x_proj = _param(rng, 6, 8)
    w_hh = _param(rng, 2, 8)
    assert gradient_check(lambda: sum_(mul(lstm_sequence(x_proj, w_hh), 0.7)), [x_proj, w_hh]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_unfold_and_masked_ops(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 7, 2)
    mask = rng.random((7, 7)) > 0.5
    np.fill_diagonal(mask, True)

    def loss():
        cols = unfold1d(x, 3)
        pooled = max_over(x, mask=mask)
        attn = masked_softmax(matmul(x, reshape(x, (2, 7))), mask, axis=1)
        return add(add(sum_(mul(cols, cols)), sum_(pooled)), sum_(mul(attn, attn)))

    assert gradient_check(loss, [x]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_l2_normalize_rows(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 4, 3)
    target = rng.normal(size=(4, 3))
    assert gradient_check(lambda: sum_(mul(l2_normalize_rows(x), target)), [x]) < TOL


def test_gradient_check_of_unused_tensor_is_exact():
    x = _param(np.random.default_rng(0), 3)
    y = _param(np.random.default_rng(1), 3)
    assert gradient_check(lambda: sum_(mul(x, x)), [x, y]) < TOL


def test_gradient_check_tolerates_roundoff_sized_gradients():
    x = _param(np.random.default_rng(2), 4)
    loss = lambda: add(sum_(mul(x, 1e-13)), 1.0)
    assert gradient_check(loss, [x]) == 0.0
    assert gradient_check(loss, [x], atol=0.0) > 0.5


def test_fan_out_accumulates():
    x = parameter([1.5, -2.0])
    loss = sum_(add(mul(x, x), x))
    backward(loss, [x])
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_take_repeated_indices_accumulate():
    x = parameter(np.arange(6.0).reshape(3, 2))
    backward(sum_(take(x, [0, 0, 2], axis=0)), [x])
    np.testing.assert_allclose(x.grad, [[2, 2], [0, 0], [1, 1]])


def test_tape_is_topological_and_visits_once():
    x = parameter([1.0, 2.0])
    y = mul(x, x)
    loss = sum_(add(y, y))
    tape = ComputeTape.record(loss)
    ids = [id(n) for n in tape]
    assert len(ids) == len(set(ids))
    assert ids.index(id(x)) < ids.index(id(y)) < ids.index(id(loss))


def test_unreached_parameter_gets_zero_gradient():
    used = parameter([1.0])
    unused = parameter([3.0, 4.0])
    backward(sum_(mul(used, 2.0)), [used, unused])
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        backward(parameter([1.0, 2.0]))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError, match=r"\(2, 3\) vs \(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_leaky_relu_alpha_range():
    with pytest.raises(DataError):
        leaky_relu(Tensor([1.0]), alpha=1.0)


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(DataError):
        cross_entropy(log_softmax(Tensor(np.zeros((2, 3))), axis=1), [0, 3])


def test_masked_softmax_zeroes_masked_entries():
    mask = np.array([[True, False, True], [False, True, False]])
    out = masked_softmax(Tensor(np.ones((2, 3))), mask, axis=1).data
    np.testing.assert_allclose(out, [[0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])


def test_masked_softmax_requires_member():
    with pytest.raises(DataError):
        masked_softmax(Tensor(np.ones((1, 2))), np.array([[False, False]]))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_log_softmax_normalizes(values):
    out = log_softmax(Tensor(np.array([values])), axis=1).data
    assert np.isclose(np.exp(out).sum(), 1.0)


def test_fused_lstm_matches_composed_cell():
    rng = np.random.default_rng(5)
    cell = LstmCell(3, 4, rng)
    x = rng.normal(size=(6, 3))
    fused = cell.sequence(x).data
    h = Tensor(np.zeros((1, 4)))
    c = Tensor(np.zeros((1, 4)))
    rows = []
    for t in range(6):
        h, c = lstm_cell_forward(x[t], h, c, cell)
        rows.append(h.data[0])
    np.testing.assert_allclose(fused, np.array(rows), atol=1e-12)


def test_lstm_zero_input_converges_to_fixed_point():
    rng = np.random.default_rng(9)
    w_hh = parameter(0.1 * rng.normal(size=(3, 12)))
    bias = 0.1 * rng.normal(size=12)
    x_proj = Tensor(np.tile(bias, (200, 1)))
    h = lstm_sequence(x_proj, w_hh).data
    np.testing.assert_allclose(h[-1], h[-2], atol=1e-8)


def test_relu_gradient_masks_negatives():
    x = parameter([-1.0, 2.0])
    backward(sum_(relu(x)), [x])
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class _Pair(Module):
    def __init__(self, rng):
        self.first = Linear(3, 2, rng)
        self.extra = [parameter(np.ones(2)), parameter(np.zeros(3))]


def test_module_collects_list_parameters_and_restores_state():
    model = _Pair(np.random.default_rng(0))
    names = [n for n, _ in model.named_parameters()]
    assert names == ["extra.0", "extra.1", "first.weight", "first.bias"]
    assert model.parameter_count() == 2 + 3 + 6 + 2
    state = model.state_dict()
    model.first.weight.data = np.zeros((2, 3))
    model.load_state_dict(state)
    np.testing.assert_array_equal(model.first.weight.data, state["first.weight"])


def test_linear_rejects_wrong_width():
    layer = Linear(3, 2, np.random.default_rng(0))
    assert layer(np.ones((4, 3))).shape == (4, 2)
    with pytest.raises(DimensionError):
        layer(np.ones((4, 2)))


def test_concat_and_mean_shapes():
    out = mean(concat([Tensor(np.ones((2, 3))), Tensor(np.zeros((1, 3)))], axis=0), axis=0)
    np.testing.assert_allclose(out.data, [2 / 3] * 3)
