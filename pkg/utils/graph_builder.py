"""
Window -> graph construction.

Nodes are the transactions of one window. Edge weights come from the Pearson
correlation between node feature rows, passed through leaky-ReLU, absolute
value and a threshold; self-loops always carry weight 1.
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataError, DimensionError
from utils.dataset_util import WindowSet

logger = logging.getLogger(__name__)


def correlation_matrix(window_features: np.ndarray) -> np.ndarray:
    """
    Pearson correlation between rows (nodes) of a (w x F) window.

    A zero-variance row correlates 0 with every other row and 1 with itself.
    """
    x = np.asarray(window_features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("correlation_matrix expects a (nodes x features) matrix", x.shape)
    w, f = x.shape
    if w < 2 or f < 2:
        raise DataError(f"correlation_matrix needs at least 2 nodes and 2 features, got {x.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.corrcoef(x)
    corr = np.nan_to_num(corr, nan=0.0, posinf=0.0, neginf=0.0)
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    return 0.5 * (corr + corr.T)


def rectify_and_threshold(corr: np.ndarray, threshold: float = 0.5, leak_alpha: float = 0.1) -> np.ndarray:
    """a = |leaky_relu(c)|, zeroed where a <= threshold, unit diagonal."""
    if not 0.0 <= threshold < 1.0:
        raise DataError(f"threshold must lie in [0, 1), got {threshold}")
    if not 0.0 <= leak_alpha < 1.0:
        raise DataError(f"leak_alpha must lie in [0, 1), got {leak_alpha}")
    corr = np.asarray(corr, dtype=np.float64)
    adjacency = np.abs(np.where(corr >= 0, corr, leak_alpha * corr))
    adjacency = np.where(adjacency > threshold, adjacency, 0.0)
    np.fill_diagonal(adjacency, 1.0)
    return adjacency


@dataclass(frozen=True, eq=False)
class SampleGraph:
    """One window: node features, thresholded adjacency, and per-node labels."""
    node_features: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray
    window_index: int = 0

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @cached_property
    def neighbor_mask(self) -> np.ndarray:
        """Boolean NF(v) membership, self excluded."""
        mask = self.adjacency != 0
        np.fill_diagonal(mask, False)
        return mask

    @cached_property
    def neighbor_lists(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(tuple(np.flatnonzero(row).tolist()) for row in self.neighbor_mask)

    @cached_property
    def mean_operator(self) -> np.ndarray:
        """Row v averages {v} and NF(v) with equal weights."""
        member = self.neighbor_mask | np.eye(self.n_nodes, dtype=bool)
        return member / member.sum(axis=1, keepdims=True)

    @cached_property
    def pool_mask(self) -> np.ndarray:
        """NF(v), or {v} alone when the neighborhood is empty."""
        mask = self.neighbor_mask.copy()
        empty = ~mask.any(axis=1)
        mask[empty, empty.nonzero()[0]] = True
        return mask

    @cached_property
    def attention_mask(self) -> np.ndarray:
        return self.neighbor_mask | np.eye(self.n_nodes, dtype=bool)

    def edges(self) -> List[Tuple[int, int, float]]:
        """Off-diagonal (src, dst, weight) triples, src < dst."""
        src, dst = np.nonzero(np.triu(self.neighbor_mask, k=1))
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(src, dst)]


def build_graph(window_features: np.ndarray, labels: Sequence[int], threshold: float = 0.5,
                leak_alpha: float = 0.1, window_index: int = 0) -> SampleGraph:
    features = np.asarray(window_features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (features.shape[0],):
        raise DimensionError("build_graph: one label per node required", labels.shape, features.shape)
    adjacency = rectify_and_threshold(correlation_matrix(features), threshold, leak_alpha)
    return SampleGraph(node_features=features, adjacency=adjacency, labels=labels, window_index=window_index)


def build_window_graphs(values: np.ndarray, labels: np.ndarray, windows: WindowSet,
                        threshold: float = 0.5, leak_alpha: float = 0.1,
                        indices: Optional[Sequence[int]] = None) -> List[SampleGraph]:
    """One graph per window (or per listed window index) over already scaled rows."""
    indices = range(len(windows)) if indices is None else indices
    graphs = []
    for i in indices:
        rows = windows.rows(i)
        graphs.append(build_graph(values[rows], labels[rows], threshold, leak_alpha, window_index=int(i)))
    if graphs:
        density = np.mean([g.neighbor_mask.mean() for g in graphs])
        logger.debug("Built %d graphs, mean edge density %.3f", len(graphs), density)
    return graphs


def dump_graphs(graphs: Sequence[SampleGraph], out_dir) -> Path:
    """Write `window_<i>.csv` edge lists (src,dst,weight) plus `index.json`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for graph in graphs:
        name = f"window_{graph.window_index}.csv"
        edges = pd.DataFrame(graph.edges(), columns=["src", "dst", "weight"])
        edges.to_csv(out_dir / name, index=False, float_format="%.6g")
        index.append({"window": graph.window_index, "file": name, "nodes": graph.n_nodes,
                      "edges": len(edges)})
    path = out_dir / "index.json"
    path.write_text(json.dumps({"graphs": index}, indent=2))
    return path
