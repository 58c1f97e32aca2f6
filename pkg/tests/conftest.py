import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from models import TrainConfig
from utils.graph_builder import SampleGraph

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def shipping_csv() -> Path:
    return FIXTURES / "shipping.csv"


@pytest.fixture
def dataco_csv() -> Path:
    return FIXTURES / "dataco.csv"


@pytest.fixture
def smart_logistics_csv() -> Path:
    return FIXTURES / "smart_logistics.csv"


@pytest.fixture
def toy_graph() -> SampleGraph:
    """Six nodes in two triangles (0-1-2, 3-4-5) joined by the edge 2-3."""
    rng = np.random.default_rng(3)
    adjacency = np.eye(6)
    for i, j in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]:
        adjacency[i, j] = adjacency[j, i] = 0.8
    features = rng.normal(size=(6, 4))
    return SampleGraph(node_features=features, adjacency=adjacency, labels=np.array([0, 0, 0, 1, 1, 1]))


@pytest.fixture
def tiny_config() -> TrainConfig:
    """Small enough for a full fold in well under a second."""
    return TrainConfig(dataset_id="Synthetic", task_id="label", epochs=3, window_size=10, k_folds=2,
                       graph_layers=2, conv_layers=1, lstm_layers=1, logistic_epochs=5)
