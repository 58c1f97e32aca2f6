"""
The two non-graph branches: a stack of width-5 1-D convolutions over the
window axis and a stacked LSTM over the window's rows, each ending in a
per-node log-softmax head.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError
from utils.tensor_engine import (
    ArrayLike, Linear, Module, Tensor, add, as_tensor, glorot_uniform, leaky_relu, log_softmax,
    lstm_sequence, matmul, mul, parameter, reshape, sigmoid, slice_, take, tanh, transpose, unfold1d,
)

logger = logging.getLogger(__name__)

KERNEL_WIDTH = 5
CONV_LEAK = 0.1


# ============= CONVOLUTION =============

class Conv1dLayer(Module):
    """Valid, stride-1 cross-correlation: (L x C) -> (L-4 x K)."""

    def __init__(self, in_channels: int, n_kernels: int, rng: np.random.Generator,
                 width: int = KERNEL_WIDTH, activate: bool = True):
        self.in_channels = in_channels
        self.n_kernels = n_kernels
        self.width = width
        self.activate = activate
        self.weight = parameter(glorot_uniform(rng, (n_kernels, in_channels, width),
                                               in_channels * width, n_kernels * width))
        self.bias = parameter(np.zeros(n_kernels))

    def __call__(self, x: ArrayLike) -> Tensor:
        return conv1d_forward(x, self)


def conv1d_forward(x: ArrayLike, layer: Conv1dLayer) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_channels:
        raise DimensionError(f"conv1d expects (length x {layer.in_channels}) input", x.shape)
    if x.shape[0] < layer.width:
        raise DimensionError(f"conv1d: length {x.shape[0]} is shorter than kernel width {layer.width}", x.shape)
    columns = unfold1d(x, layer.width)
    kernels = reshape(layer.weight, (layer.n_kernels, layer.in_channels * layer.width))
    out = add(matmul(columns, transpose(kernels)), layer.bias)
    return leaky_relu(out, CONV_LEAK) if layer.activate else out


def restore_length(x: Tensor, length: int) -> Tensor:
    """Edge-replicate rows symmetrically until the sequence is `length` long again."""
    short = x.shape[0]
    pad = length - short
    if pad < 0:
        raise DimensionError(f"restore_length: cannot shrink to {length}", x.shape)
    left = pad // 2
    index = np.clip(np.arange(length) - left, 0, short - 1)
    return take(x, index, axis=0)


class ConvBranch(Module):
    """conv x L -> edge replication back to w rows -> linear -> log_softmax."""

    def __init__(self, in_dim: int, n_classes: int, rng: np.random.Generator, n_layers: int = 2,
                 kernels: Optional[Sequence[int]] = None):
        kernels = list(kernels) if kernels is not None else [in_dim] * (n_layers - 1) + [n_classes]
        if len(kernels) != n_layers:
            raise DimensionError(f"ConvBranch: {n_layers} layers but {len(kernels)} kernel counts")
        channels = [in_dim] + kernels
        self.layers = [Conv1dLayer(channels[i], channels[i + 1], rng) for i in range(n_layers)]
        self.head = Linear(kernels[-1], n_classes, rng)

    def min_length(self) -> int:
        return len(self.layers) * (KERNEL_WIDTH - 1) + 1

    def __call__(self, x: ArrayLike) -> Tensor:
        x = as_tensor(x)
        length = x.shape[0]
        for layer in self.layers:
            x = layer(x)
        return log_softmax(self.head(restore_length(x, length)), axis=1)


def conv_branch_forward(x: ArrayLike, branch: ConvBranch) -> Tensor:
    return branch(x)


# ============= LSTM =============

class LstmCell(Module):
    """Gate order [input, forget, cell, output]; W_ih (in x 4H), W_hh (H x 4H)."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        self.w_ih = parameter(glorot_uniform(rng, (in_dim, 4 * hidden), in_dim, 4 * hidden))
        self.w_hh = parameter(glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        self.bias = parameter(np.zeros(4 * hidden))

    def project(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w_ih), self.bias)

    def sequence(self, x: ArrayLike) -> Tensor:
        """(T x in) -> (T x H) from a zero state."""
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"LSTM expects (steps x {self.in_dim}) input", x.shape)
        return lstm_sequence(self.project(x), self.w_hh)


def lstm_cell_forward(x_t: ArrayLike, h_prev: ArrayLike, c_prev: ArrayLike,
                      cell: LstmCell) -> Tuple[Tensor, Tensor]:
    """One step on (n x in) rows, composed from primitives."""
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    if x_t.ndim == 1:
        x_t = reshape(x_t, (1, -1))
    if h_prev.ndim == 1:
        h_prev = reshape(h_prev, (1, -1))
    if c_prev.ndim == 1:
        c_prev = reshape(c_prev, (1, -1))
    if x_t.shape[1] != cell.in_dim or h_prev.shape[1] != cell.hidden or c_prev.shape != h_prev.shape:
        raise DimensionError("lstm_cell_forward: state widths disagree", x_t.shape, h_prev.shape, c_prev.shape)
    H = cell.hidden
    z = add(add(matmul(x_t, cell.w_ih), matmul(h_prev, cell.w_hh)), cell.bias)
    i = sigmoid(slice_(z, (slice(None), slice(0, H))))
    f = sigmoid(slice_(z, (slice(None), slice(H, 2 * H))))
    g = tanh(slice_(z, (slice(None), slice(2 * H, 3 * H))))
    o = sigmoid(slice_(z, (slice(None), slice(3 * H, 4 * H))))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


class LstmBranch(Module):
    """Stacked LSTM layers, then a shared per-timestep linear head and log_softmax."""

    def __init__(self, in_dim: int, n_classes: int, rng: np.random.Generator, n_layers: int = 5,
                 hidden: Optional[int] = None):
        hidden = hidden or in_dim
        dims = [in_dim] + [hidden] * n_layers
        self.cells: List[LstmCell] = [LstmCell(dims[i], dims[i + 1], rng) for i in range(n_layers)]
        self.head = Linear(hidden, n_classes, rng)

    def hidden_states(self, x: ArrayLike) -> Tensor:
        h = as_tensor(x)
        for cell in self.cells:
            h = cell.sequence(h)
        return h

    def __call__(self, x: ArrayLike) -> Tensor:
        return log_softmax(self.head(self.hidden_states(x)), axis=1)


def lstm_branch_forward(x: ArrayLike, branch: LstmBranch) -> Tensor:
    return branch(x)
