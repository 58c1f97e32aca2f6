"""
Graph layers: GraphSAGE with mean/pool/LSTM aggregators, multi-head graph
attention, batch normalization and the negative-sampling embedding loss.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from errors import DataError, DimensionError
from utils.graph_builder import SampleGraph
from utils.sequence_branches import LstmCell
from utils.tensor_engine import (
    ArrayLike, Linear, Module, Tensor, add, as_tensor, concat, div, glorot_uniform, l2_normalize_rows,
    leaky_relu, log_sigmoid, masked_softmax, matmul, max_over, mean, mul, neg, parameter,
    relu, reshape, slice_, sqrt, sub, sum_, take, transpose,
)

logger = logging.getLogger(__name__)

AGGREGATORS = ("mean", "pool", "lstm")
GAT_LEAK = 0.2


def _stack(vectors: Sequence[ArrayLike]) -> Tensor:
    rows = []
    for v in vectors:
        v = as_tensor(v)
        rows.append(reshape(v, (1, -1)) if v.ndim == 1 else v)
    return concat(rows, axis=0)


# ============= AGGREGATORS =============

def aggregate_mean(h_self: ArrayLike, neighbors: Sequence[ArrayLike]) -> Tensor:
    """Element-wise mean of {h_self} and the neighbors; rows are summed in sorted order."""
    members = _stack([h_self, *neighbors])
    order = np.lexsort(members.data.T[::-1])
    return mean(take(members, order, axis=0), axis=0)


def aggregate_pool(neighbors: Sequence[ArrayLike], w_pool: Tensor, b_pool: Tensor,
                   h_self: Optional[ArrayLike] = None) -> Tensor:
    """max over relu(W_pool h + b); an empty neighborhood pools over h_self alone."""
    if not neighbors:
        if h_self is None:
            raise DataError("aggregate_pool: empty neighborhood and no self vector")
        neighbors = [h_self]
    members = _stack(neighbors)
    return max_over(relu(add(matmul(members, transpose(w_pool)), b_pool)), axis=0)


def aggregate_lstm(neighbors: Union[Tensor, Sequence[ArrayLike]], cell: LstmCell, seed: int,
                   h_self: Optional[ArrayLike] = None) -> Tensor:
    """
    Final hidden state of the aggregator LSTM over a seeded permutation of the
    neighbor rows. `neighbors` is a list of vectors or an (m x in) tensor; an
    empty neighborhood runs over h_self alone.
    """
    members = neighbors if isinstance(neighbors, Tensor) else (_stack(neighbors) if len(neighbors) else None)
    if members is None or members.shape[0] == 0:
        if h_self is None:
            raise DataError("aggregate_lstm: empty neighborhood and no self vector")
        members = _stack([h_self])
    order = np.random.default_rng(seed).permutation(members.shape[0])
    states = cell.sequence(take(members, order, axis=0))
    last = states.shape[0] - 1
    return reshape(slice_(states, slice(last, last + 1)), (cell.hidden,))


# ============= NORMALIZATION =============

class BatchNorm(Module):
    """Per-channel batch normalization with running statistics as buffers."""
    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: ArrayLike) -> Tensor:
        return batch_norm_forward(x, self, self.training)


def batch_norm_forward(x: ArrayLike, bn: BatchNorm, training: bool) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != bn.dim:
        raise DimensionError(f"batch norm expects (n x {bn.dim}) input", x.shape)
    n = x.shape[0]
    if training and n < 2:
        logger.warning("Batch norm got a batch of size %d in training mode; using running statistics", n)
        training = False
    if training:
        mu = mean(x, axis=0)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=0)
        x_hat = div(centered, sqrt(add(var, bn.eps)))
        m = bn.momentum
        bn.running_mean = (1.0 - m) * bn.running_mean + m * mu.data
        bn.running_var = (1.0 - m) * bn.running_var + m * var.data * n / (n - 1)
    else:
        x_hat = div(sub(x, bn.running_mean), np.sqrt(bn.running_var + bn.eps))
    return add(mul(x_hat, bn.gamma), bn.beta)


# ============= GRAPHSAGE =============

class SageLayer(Module):
    """
    h'_v = relu(W [h_v || h_N(v)] + b), followed by batch norm or L2 row normalization.

    With `convolutional_variant` the concatenation is replaced by
    W * mean({h_v} and NF(v)), and W is (out x in).
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, aggregator: str = "mean",
                 normalization: Optional[str] = "batchnorm", convolutional_variant: bool = False,
                 seed: int = 0):
        if aggregator not in AGGREGATORS:
            raise DataError(f"Unknown aggregator '{aggregator}' (known: {', '.join(AGGREGATORS)})")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.aggregator = aggregator
        self.normalization = normalization
        self.convolutional_variant = convolutional_variant
        self.seed = seed
        self.linear = Linear(in_dim if convolutional_variant else 2 * in_dim, out_dim, rng)
        if aggregator == "pool":
            self.w_pool = parameter(glorot_uniform(rng, (in_dim, in_dim), in_dim, in_dim))
            self.b_pool = parameter(np.zeros(in_dim))
        elif aggregator == "lstm":
            self.lstm = LstmCell(in_dim, in_dim, rng)
        self.norm = BatchNorm(out_dim) if normalization == "batchnorm" else None

    def neighborhood(self, graph: SampleGraph, h: Tensor) -> Tensor:
        """(n x in) aggregated neighborhood vectors."""
        if self.aggregator == "mean":
            return matmul(Tensor(graph.mean_operator), h)
        if self.aggregator == "pool":
            transformed = relu(add(matmul(h, transpose(self.w_pool)), self.b_pool))
            return max_over(transformed, mask=graph.pool_mask)
        rows = []
        for v, members in enumerate(graph.neighbor_lists):
            members = list(members)
            neighbors = take(h, members, axis=0) if members else []
            state = aggregate_lstm(neighbors, self.lstm, self.seed + v, h_self=slice_(h, slice(v, v + 1)))
            rows.append(reshape(state, (1, -1)))
        return concat(rows, axis=0)

    def __call__(self, graph: SampleGraph, h: ArrayLike) -> Tensor:
        return sage_layer_forward(graph, h, self)


def sage_layer_forward(graph: SampleGraph, h: ArrayLike, layer: SageLayer,
                       normalize: Optional[str] = None) -> Tensor:
    h = as_tensor(h)
    if h.ndim != 2 or h.shape != (graph.n_nodes, layer.in_dim):
        raise DimensionError(f"SageLayer expects ({graph.n_nodes} x {layer.in_dim}) node matrix", h.shape)
    h_n = layer.neighborhood(graph, h)
    z = h_n if layer.convolutional_variant else concat([h, h_n], axis=1)
    out = relu(layer.linear(z))
    normalize = normalize or layer.normalization
    if normalize == "l2":
        return l2_normalize_rows(out)
    if normalize == "batchnorm":
        if layer.norm is None:
            raise DimensionError("sage_layer_forward: layer has no batch norm parameters")
        return layer.norm(out)
    return out


# ============= GRAPH ATTENTION =============

class GatLayer(Module):
    """
    Multi-head graph attention over {v} and NF(v).

    Each head has W (F' x F) and an attention vector of length 2F'; logits pass
    through leaky_relu with slope `leak`. Hidden layers concatenate heads and the
    final layer averages them.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, heads: int = 1,
                 mode: str = "concat", normalization: Optional[str] = "batchnorm", leak: float = GAT_LEAK):
        if mode not in ("concat", "average"):
            raise DataError(f"Unknown head mode '{mode}'")
        self.in_dim = in_dim
        self.head_dim = out_dim
        self.heads = heads
        self.mode = mode
        self.normalization = normalization
        self.leak = leak
        self.weights = [parameter(glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)) for _ in range(heads)]
        self.attention = [parameter(glorot_uniform(rng, (2 * out_dim,), 2 * out_dim, 1)) for _ in range(heads)]
        self.norm = BatchNorm(self.out_dim) if normalization == "batchnorm" else None

    @property
    def out_dim(self) -> int:
        return self.head_dim * self.heads if self.mode == "concat" else self.head_dim

    def __call__(self, graph: SampleGraph, h: ArrayLike) -> Tensor:
        return gat_layer_forward(graph, h, self)


def _head_transform(h: Tensor, layer: GatLayer, head: int) -> Tuple[Tensor, Tensor]:
    z = matmul(h, transpose(layer.weights[head]))
    a = layer.attention[head]
    d = layer.head_dim
    src = matmul(z, reshape(slice_(a, slice(0, d)), (d, 1)))
    dst = matmul(z, reshape(slice_(a, slice(d, 2 * d)), (d, 1)))
    logits = leaky_relu(add(src, transpose(dst)), layer.leak)
    return z, logits


def gat_attention_coefficients(graph: SampleGraph, h: ArrayLike, layer: GatLayer, head: int = 0) -> Tensor:
    """(n x n) coefficients; row m is a softmax over {m} and NF(m), zero elsewhere."""
    h = as_tensor(h)
    if h.shape != (graph.n_nodes, layer.in_dim):
        raise DimensionError(f"GatLayer expects ({graph.n_nodes} x {layer.in_dim}) node matrix", h.shape)
    _, logits = _head_transform(h, layer, head)
    return masked_softmax(logits, graph.attention_mask, axis=1)


def gat_layer_forward(graph: SampleGraph, h: ArrayLike, layer: GatLayer, mode: Optional[str] = None) -> Tensor:
    h = as_tensor(h)
    if h.shape != (graph.n_nodes, layer.in_dim):
        raise DimensionError(f"GatLayer expects ({graph.n_nodes} x {layer.in_dim}) node matrix", h.shape)
    mode = mode or layer.mode
    outputs = []
    for head in range(layer.heads):
        z, logits = _head_transform(h, layer, head)
        outputs.append(matmul(masked_softmax(logits, graph.attention_mask, axis=1), z))
    if mode == "concat":
        out = concat([relu(o) for o in outputs], axis=1)
    else:
        total = outputs[0]
        for o in outputs[1:]:
            total = add(total, o)
        out = relu(mul(total, 1.0 / layer.heads))
    if layer.normalization == "l2":
        return l2_normalize_rows(out)
    if layer.norm is not None:
        return layer.norm(out)
    return out


# ============= UNSUPERVISED LOSS =============

@dataclass(frozen=True)
class NegSampleBatch:
    """Anchor node u, co-occurring node v and negative nodes drawn from P_n."""
    anchor: int
    positive: int
    negatives: Tuple[int, ...]

    def __post_init__(self):
        if not self.negatives:
            raise DataError("NegSampleBatch needs at least one negative")
        if self.positive in self.negatives:
            raise DataError(f"Negative samples must not contain the positive node {self.positive}")

    @property
    def q(self) -> int:
        return len(self.negatives)


def unsupervised_graph_loss(z_u: ArrayLike, z_v: ArrayLike, negatives: ArrayLike,
                            q: Optional[int] = None) -> Tensor:
    """J = -log s(z_u . z_v) - Q * mean_n log s(-z_u . z_n), s = sigmoid."""
    z_u, z_v, negatives = as_tensor(z_u), as_tensor(z_v), as_tensor(negatives)
    if negatives.ndim == 1:
        negatives = reshape(negatives, (1, -1))
    q = q or negatives.shape[0]
    if q < 1 or q > negatives.shape[0]:
        raise DataError(f"unsupervised_graph_loss: Q={q} with {negatives.shape[0]} negatives")
    if z_u.shape != z_v.shape or negatives.shape[1] != z_u.shape[0]:
        raise DimensionError("unsupervised_graph_loss: embedding widths differ", z_u.shape, z_v.shape,
                             negatives.shape)
    negatives = slice_(negatives, slice(0, q))
    positive = sum_(mul(z_u, z_v))
    scores = matmul(negatives, reshape(z_u, (-1, 1)))
    return sub(neg(log_sigmoid(positive)), mul(mean(log_sigmoid(neg(scores))), float(q)))
