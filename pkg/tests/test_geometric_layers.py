import logging

import numpy as np
import pytest
from scipy.special import log_expit

from errors import DataError, DimensionError
from models import TrainConfig
from utils.geometric_layers import (
    BatchNorm, GatLayer, NegSampleBatch, SageLayer, aggregate_lstm, aggregate_mean, aggregate_pool,
    batch_norm_forward, gat_attention_coefficients, gat_layer_forward, sage_layer_forward,
    unsupervised_graph_loss,
)
from utils.graph_builder import SampleGraph, build_graph
from utils.hybrid_trainer import HybridModel
from utils.sequence_branches import LstmCell
from utils.tensor_engine import Tensor, gradient_check, mul, parameter, sum_

SEEDS = range(10)


# ============= AGGREGATORS =============

def test_mean_aggregator_is_permutation_invariant():
    rng = np.random.default_rng(0)
    h_self = rng.normal(size=4)
    neighbors = [rng.normal(size=4) for _ in range(5)]
    expected = aggregate_mean(h_self, neighbors).data
    for seed in range(5):
        order = np.random.default_rng(seed).permutation(5)
        np.testing.assert_array_equal(aggregate_mean(h_self, [neighbors[i] for i in order]).data, expected)
    np.testing.assert_allclose(expected, np.mean([h_self, *neighbors], axis=0))


def test_mean_aggregator_matches_layer_neighborhood(toy_graph):
    layer = SageLayer(4, 3, np.random.default_rng(0), aggregator="mean")
    h = Tensor(toy_graph.node_features)
    rows = layer.neighborhood(toy_graph, h).data
    for v, members in enumerate(toy_graph.neighbor_lists):
        expected = aggregate_mean(h.data[v], [h.data[u] for u in members]).data
        np.testing.assert_allclose(rows[v], expected)


def test_pool_aggregator_on_empty_neighborhood():
    w = parameter(np.eye(2))
    b = parameter(np.zeros(2))
    out = aggregate_pool([], w, b, h_self=np.array([1.0, -2.0]))
    np.testing.assert_allclose(out.data, [1.0, 0.0])
    with pytest.raises(DataError):
        aggregate_pool([], w, b)


def test_pool_aggregator_is_permutation_invariant():
    rng = np.random.default_rng(0)
    w = parameter(rng.normal(size=(4, 4)))
    b = parameter(rng.normal(size=4))
    neighbors = [rng.normal(size=4) for _ in range(5)]
    expected = aggregate_pool(neighbors, w, b).data
    for seed in range(5):
        order = np.random.default_rng(seed).permutation(5)
        np.testing.assert_allclose(aggregate_pool([neighbors[i] for i in order], w, b).data, expected, atol=1e-12)


def test_lstm_aggregator_matches_layer_neighborhood(toy_graph):
    layer = SageLayer(4, 3, np.random.default_rng(0), aggregator="lstm", seed=11)
    h = Tensor(toy_graph.node_features)
    rows = layer.neighborhood(toy_graph, h).data
    for v, members in enumerate(toy_graph.neighbor_lists):
        expected = aggregate_lstm([h.data[u] for u in members], layer.lstm, seed=layer.seed + v).data
        np.testing.assert_allclose(rows[v], expected, atol=1e-12)


def test_lstm_aggregator_on_isolated_node():
    rng = np.random.default_rng(3)
    features = rng.normal(size=(3, 2))
    adjacency = np.eye(3)
    adjacency[0, 1] = adjacency[1, 0] = 0.9
    graph = SampleGraph(node_features=features, adjacency=adjacency, labels=np.zeros(3, dtype=int))
    layer = SageLayer(2, 2, rng, aggregator="lstm", seed=4)
    rows = layer.neighborhood(graph, Tensor(features)).data
    expected = aggregate_lstm([], layer.lstm, seed=layer.seed + 2, h_self=features[2]).data
    np.testing.assert_allclose(rows[2], expected, atol=1e-12)
    with pytest.raises(DataError):
        aggregate_lstm([], layer.lstm, seed=0)


def test_lstm_aggregator_is_seeded():
    rng = np.random.default_rng(1)
    cell = LstmCell(3, 3, rng)
    neighbors = [rng.normal(size=3) for _ in range(4)]
    first = aggregate_lstm(neighbors, cell, seed=7).data
    np.testing.assert_array_equal(first, aggregate_lstm(neighbors, cell, seed=7).data)
    assert first.shape == (3,)


# ============= GRAPHSAGE =============

@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("aggregator", ["mean", "pool", "lstm"])
def test_sage_layer_gradient(toy_graph, seed, aggregator):
    rng = np.random.default_rng(seed)
    layer = SageLayer(4, 3, rng, aggregator=aggregator, normalization="l2")
    h = parameter(toy_graph.node_features + 0.01 * rng.normal(size=(6, 4)))
    target = rng.normal(size=(6, 3))
    params = [h] + layer.parameters()
    loss = lambda: sum_(mul(sage_layer_forward(toy_graph, h, layer), target))
    assert gradient_check(loss, params) < 1e-4


@pytest.mark.parametrize("convolutional_variant, in_width", [(False, 8), (True, 4)])
def test_sage_layer_weight_shape(toy_graph, convolutional_variant, in_width):
    layer = SageLayer(4, 3, np.random.default_rng(0), convolutional_variant=convolutional_variant)
    assert layer.linear.weight.shape == (3, in_width)
    out = layer(toy_graph, toy_graph.node_features)
    assert out.shape == (6, 3)


def test_l2_normalized_rows_have_unit_norm(toy_graph):
    layer = SageLayer(4, 3, np.random.default_rng(2), normalization="l2")
    out = layer(toy_graph, toy_graph.node_features).data
    norms = np.linalg.norm(out, axis=1)
    assert np.all(np.isclose(norms, 1.0) | np.isclose(norms, 0.0))


@pytest.mark.parametrize("aggregator", ["mean", "pool"])
def test_sage_layer_is_equivariant_under_relabelling(aggregator):
    rng = np.random.default_rng(6)
    features = rng.normal(size=(8, 5))
    labels = rng.integers(0, 2, size=8)
    perm = rng.permutation(8)
    layer = SageLayer(5, 3, rng, aggregator=aggregator, normalization="l2")
    out = layer(build_graph(features, labels, threshold=0.3), features).data
    permuted = layer(build_graph(features[perm], labels[perm], threshold=0.3), features[perm]).data
    np.testing.assert_allclose(permuted, out[perm], atol=1e-12)


def test_sage_layer_rejects_wrong_width(toy_graph):
    layer = SageLayer(3, 3, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        layer(toy_graph, toy_graph.node_features)


def test_shipping_stack_parameter_counts():
    config = TrainConfig(dataset_id="Shipping", task_id="shipment_mode", variant="gsn",
                         convolutional_variant=True)
    model = HybridModel(config, n_features=8, n_classes=3)
    counts = []
    for layer in model.graph_layers:
        counts.append(layer.linear.parameter_count())
        counts.append(layer.norm.parameter_count())
    assert counts == [72, 16, 45, 10, 18, 6, 12, 6]


def test_smart_logistics_first_layer_parameters():
    config = TrainConfig(dataset_id="SmartLogistics", task_id="truck_id", variant="gsn",
                         convolutional_variant=True)
    model = HybridModel(config, n_features=10, n_classes=10)
    assert model.graph_layers[0].linear.parameter_count() == 110


# ============= BATCH NORM =============

def test_batch_norm_training_statistics():
    bn = BatchNorm(3)
    x = np.random.default_rng(0).normal(4.0, 3.0, size=(20, 3))
    out = batch_norm_forward(x, bn, training=True).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-5)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batch_norm_single_row_falls_back(caplog):
    bn = BatchNorm(2)
    bn.running_mean = np.array([1.0, 1.0])
    with caplog.at_level(logging.WARNING):
        out = batch_norm_forward(np.array([[2.0, 3.0]]), bn, training=True).data
    np.testing.assert_allclose(out, np.array([[1.0, 2.0]]) / np.sqrt(1.0 + bn.eps))
    assert "size 1" in caplog.text


@pytest.mark.parametrize("seed", SEEDS)
def test_batch_norm_gradient(seed):
    rng = np.random.default_rng(seed)
    bn = BatchNorm(3)
    bn.gamma.data = rng.normal(size=3)
    x = parameter(rng.normal(size=(7, 3)))
    target = rng.normal(size=(7, 3))
    assert gradient_check(lambda: sum_(mul(batch_norm_forward(x, bn, True), target)),
                          [x, bn.gamma, bn.beta]) < 1e-4


# ============= GRAPH ATTENTION =============

def test_attention_rows_are_distributions_over_neighborhood(toy_graph):
    layer = GatLayer(4, 3, np.random.default_rng(0))
    alpha = gat_attention_coefficients(toy_graph, toy_graph.node_features, layer).data
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0)
    assert np.all(alpha[~toy_graph.attention_mask] == 0.0)
    assert np.all(alpha[toy_graph.attention_mask] > 0.0)


def test_equal_features_get_uniform_attention(toy_graph):
    layer = GatLayer(4, 3, np.random.default_rng(1))
    alpha = gat_attention_coefficients(toy_graph, np.ones((6, 4)), layer).data
    mask = toy_graph.attention_mask
    np.testing.assert_allclose(alpha, mask / mask.sum(axis=1, keepdims=True))


def _naive_attention(h, w, a, mask, leak):
    z = h @ w.T
    d = z.shape[1]
    n = len(h)
    alpha = np.zeros((n, n))
    for i in range(n):
        scores = {}
        for j in range(n):
            if mask[i, j]:
                e = a[:d] @ z[i] + a[d:] @ z[j]
                scores[j] = e if e > 0 else leak * e
        top = max(scores.values())
        total = sum(np.exp(s - top) for s in scores.values())
        for j, s in scores.items():
            alpha[i, j] = np.exp(s - top) / total
    return alpha


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("leak", [0.2, 0.05])
def test_attention_matches_double_loop(toy_graph, seed, leak):
    layer = GatLayer(4, 3, np.random.default_rng(seed), heads=2, leak=leak)
    for head in range(2):
        alpha = gat_attention_coefficients(toy_graph, toy_graph.node_features, layer, head=head).data
        expected = _naive_attention(toy_graph.node_features, layer.weights[head].data,
                                    layer.attention[head].data, toy_graph.attention_mask, leak)
        np.testing.assert_allclose(alpha, expected, atol=1e-12)


@pytest.mark.parametrize("mode, width", [("concat", 6), ("average", 3)])
def test_multi_head_output_width(toy_graph, mode, width):
    layer = GatLayer(4, 3, np.random.default_rng(0), heads=2, mode=mode)
    assert layer.out_dim == width
    assert layer(toy_graph, toy_graph.node_features).shape == (6, width)
    assert len(layer.parameters()) == 2 * 2 + 2


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_layer_gradient(toy_graph, seed):
    rng = np.random.default_rng(seed)
    layer = GatLayer(4, 3, rng, heads=2, normalization="l2")
    h = parameter(toy_graph.node_features)
    target = rng.normal(size=(6, 6))
    loss = lambda: sum_(mul(gat_layer_forward(toy_graph, h, layer), target))
    assert gradient_check(loss, [h] + layer.parameters()) < 1e-4


# ============= UNSUPERVISED LOSS =============

def test_negative_sampling_loss_value():
    z_u = np.array([1.0, 0.5])
    z_v = np.array([0.5, 1.0])
    negatives = np.array([[1.0, -1.0], [0.0, 2.0]])
    expected = -log_expit(1.0) - 2 * np.mean(log_expit(-(negatives @ z_u)))
    assert unsupervised_graph_loss(z_u, z_v, negatives).item() == pytest.approx(expected)
    single = -log_expit(1.0) - log_expit(-0.5)
    assert unsupervised_graph_loss(z_u, z_v, negatives, q=1).item() == pytest.approx(single)


@pytest.mark.parametrize("seed", SEEDS)
def test_negative_sampling_gradient(seed):
    rng = np.random.default_rng(seed)
    z_u = parameter(rng.normal(size=4))
    z_v = parameter(rng.normal(size=4))
    negs = parameter(rng.normal(size=(3, 4)))
    assert gradient_check(lambda: unsupervised_graph_loss(z_u, z_v, negs), [z_u, z_v, negs]) < 1e-5


def test_negative_batch_validation():
    assert NegSampleBatch(anchor=0, positive=1, negatives=(3, 4)).q == 2
    with pytest.raises(DataError):
        NegSampleBatch(anchor=0, positive=1, negatives=())
    with pytest.raises(DataError):
        NegSampleBatch(anchor=0, positive=1, negatives=(1, 2))
