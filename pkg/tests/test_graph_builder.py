import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from errors import DataError, DimensionError
from utils.dataset_util import window_partition
from utils.graph_builder import (
    SampleGraph, build_graph, build_window_graphs, correlation_matrix, dump_graphs, rectify_and_threshold,
)


def test_negative_correlation_is_leaked_and_rectified():
    corr = np.array([[1.0, -0.8], [-0.8, 1.0]])
    np.testing.assert_allclose(rectify_and_threshold(corr, threshold=0.05, leak_alpha=0.1),
                               [[1.0, 0.08], [0.08, 1.0]])
    np.testing.assert_allclose(rectify_and_threshold(corr, threshold=0.5, leak_alpha=0.1), np.eye(2))


def test_threshold_is_strict():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(rectify_and_threshold(corr, threshold=0.5), np.eye(2))


@pytest.mark.parametrize("threshold, alpha", [(1.0, 0.1), (-0.1, 0.1), (0.5, 1.0)])
def test_parameter_ranges(threshold, alpha):
    with pytest.raises(DataError):
        rectify_and_threshold(np.eye(2), threshold, alpha)


def test_correlation_of_known_rows():
    x = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 2.0, 1.0], [5.0, 5.0, 5.0]])
    corr = correlation_matrix(x)
    assert corr[0, 1] == pytest.approx(1.0)
    assert corr[0, 2] == pytest.approx(-1.0)
    np.testing.assert_array_equal(corr[3], [0.0, 0.0, 0.0, 1.0])


def test_correlation_needs_two_nodes_and_features():
    with pytest.raises(DataError):
        correlation_matrix(np.ones((1, 4)))
    with pytest.raises(DimensionError):
        correlation_matrix(np.ones(4))


@given(arrays(np.float64, (6, 4), elements=st.floats(-100, 100)), st.floats(0.0, 0.99))
def test_adjacency_is_symmetric_with_unit_diagonal(x, threshold):
    a = rectify_and_threshold(correlation_matrix(x), threshold)
    np.testing.assert_allclose(a, a.T)
    np.testing.assert_array_equal(np.diag(a), 1.0)
    off = a[~np.eye(6, dtype=bool)]
    assert np.all((off == 0) | (off > threshold))
    assert np.all(off <= 1.0)


@given(arrays(np.float64, (6, 4), elements=st.floats(-100, 100)), st.floats(0.0, 0.99), st.floats(0.0, 0.99))
def test_raising_threshold_only_removes_edges(x, t1, t2):
    low, high = sorted((t1, t2))
    corr = correlation_matrix(x)
    kept_low = rectify_and_threshold(corr, low) != 0
    kept_high = rectify_and_threshold(corr, high) != 0
    assert not np.any(kept_high & ~kept_low)


@given(arrays(np.float64, (6, 4), elements=st.integers(-20, 20).map(float)),
       arrays(np.float64, (6, 1), elements=st.floats(0.5, 4.0)),
       arrays(np.float64, (6, 1), elements=st.integers(-50, 50).map(float)))
def test_correlation_ignores_row_scale_and_shift(x, scale, shift):
    np.testing.assert_allclose(correlation_matrix(x * scale + shift), correlation_matrix(x), atol=1e-9)


def test_graph_views(toy_graph):
    assert toy_graph.neighbor_lists[2] == (0, 1, 3)
    np.testing.assert_allclose(toy_graph.mean_operator.sum(axis=1), 1.0)
    assert toy_graph.mean_operator[2, 2] == pytest.approx(0.25)
    assert not toy_graph.neighbor_mask.diagonal().any()
    assert len(toy_graph.edges()) == 7


def test_isolated_node_pools_over_itself():
    graph = SampleGraph(node_features=np.zeros((3, 2)), adjacency=np.eye(3), labels=np.zeros(3, dtype=int))
    np.testing.assert_array_equal(graph.pool_mask, np.eye(3, dtype=bool))
    np.testing.assert_array_equal(graph.mean_operator, np.eye(3))


def test_build_graph_requires_label_per_node():
    with pytest.raises(DimensionError):
        build_graph(np.random.default_rng(0).normal(size=(4, 3)), [0, 1, 0])


def test_window_graphs_and_dump(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.normal(size=(25, 5))
    labels = rng.integers(0, 2, size=25)
    graphs = build_window_graphs(values, labels, window_partition(25, 10), threshold=0.3)
    assert [g.window_index for g in graphs] == [0, 1]
    np.testing.assert_array_equal(graphs[1].labels, labels[10:20])

    index = json.loads(dump_graphs(graphs, tmp_path).read_text())
    assert [entry["file"] for entry in index["graphs"]] == ["window_0.csv", "window_1.csv"]
    edges = pd.read_csv(tmp_path / "window_0.csv")
    assert list(edges.columns) == ["src", "dst", "weight"]
    assert len(edges) == index["graphs"][0]["edges"]
    assert (edges["src"] < edges["dst"]).all()
