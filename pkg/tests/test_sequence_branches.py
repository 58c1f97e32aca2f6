import numpy as np
import pytest

from errors import DimensionError
from utils.sequence_branches import (
    KERNEL_WIDTH, Conv1dLayer, ConvBranch, LstmBranch, LstmCell, conv1d_forward, conv_branch_forward,
    lstm_branch_forward, lstm_cell_forward, restore_length,
)
from utils.tensor_engine import Tensor, gradient_check, mul, parameter, sum_

SEEDS = range(10)


def _naive_conv(x, weight, bias, alpha=0.1):
    length = x.shape[0] - weight.shape[2] + 1
    out = np.zeros((length, weight.shape[0]))
    for t in range(length):
        for k in range(weight.shape[0]):
            out[t, k] = np.sum(weight[k] * x[t:t + weight.shape[2]].T) + bias[k]
    return np.where(out >= 0, out, alpha * out)


def test_conv_matches_direct_cross_correlation():
    rng = np.random.default_rng(0)
    layer = Conv1dLayer(3, 4, rng)
    layer.bias.data = rng.normal(size=4)
    x = rng.normal(size=(11, 3))
    np.testing.assert_allclose(conv1d_forward(x, layer).data, _naive_conv(x, layer.weight.data, layer.bias.data))


def test_conv_shortens_by_kernel_width():
    layer = Conv1dLayer(2, 5, np.random.default_rng(0))
    assert conv1d_forward(np.ones((20, 2)), layer).shape == (20 - KERNEL_WIDTH + 1, 5)
    with pytest.raises(DimensionError):
        conv1d_forward(np.ones((4, 2)), layer)
    with pytest.raises(DimensionError):
        conv1d_forward(np.ones((20, 3)), layer)


def test_restore_length_replicates_edges_symmetrically():
    x = Tensor(np.arange(12.0).reshape(12, 1))
    out = restore_length(x, 20).data[:, 0]
    assert out.shape == (20,)
    np.testing.assert_array_equal(out[:4], [0, 0, 0, 0])
    np.testing.assert_array_equal(out[4:16], np.arange(12.0))
    np.testing.assert_array_equal(out[16:], [11, 11, 11, 11])
    with pytest.raises(DimensionError):
        restore_length(x, 10)


def test_conv_branch_emits_per_node_log_probabilities():
    branch = ConvBranch(8, 3, np.random.default_rng(0), n_layers=2)
    assert branch.min_length() == 9
    assert [layer.n_kernels for layer in branch.layers] == [8, 3]
    out = conv_branch_forward(np.random.default_rng(1).normal(size=(20, 8)), branch).data
    assert out.shape == (20, 3)
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_branch_gradient(seed):
    rng = np.random.default_rng(seed)
    branch = ConvBranch(3, 2, rng, n_layers=2)
    x = parameter(rng.normal(size=(12, 3)))
    target = rng.normal(size=(12, 2))
    loss = lambda: sum_(mul(branch(x), target))
    assert gradient_check(loss, [x] + branch.parameters()) < 1e-4


def test_lstm_cell_rejects_mismatched_state():
    cell = LstmCell(3, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        lstm_cell_forward(np.ones(3), np.zeros(3), np.zeros(3), cell)
    with pytest.raises(DimensionError):
        cell.sequence(np.ones((5, 2)))


def test_lstm_branch_shapes():
    branch = LstmBranch(4, 3, np.random.default_rng(0), n_layers=5)
    assert len(branch.cells) == 5
    assert branch.cells[0].w_ih.shape == (4, 16)
    assert branch.cells[0].w_hh.shape == (4, 16)
    out = lstm_branch_forward(np.random.default_rng(1).normal(size=(20, 4)), branch).data
    assert out.shape == (20, 3)
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0)


def test_lstm_branch_custom_hidden():
    branch = LstmBranch(4, 2, np.random.default_rng(0), n_layers=2, hidden=6)
    assert branch.cells[1].w_ih.shape == (6, 24)
    assert branch.hidden_states(np.zeros((5, 4))).shape == (5, 6)


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_branch_gradient(seed):
    rng = np.random.default_rng(seed)
    branch = LstmBranch(3, 2, rng, n_layers=2)
    x = parameter(rng.normal(size=(6, 3)))
    target = rng.normal(size=(6, 2))
    loss = lambda: sum_(mul(branch(x), target))
    assert gradient_check(loss, [x] + branch.parameters()) < 1e-5
