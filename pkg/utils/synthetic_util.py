"""
Seeded synthetic data: a class-separable table for learning checks and a
schema/dataset pair that runs the full pipeline without a CSV.
"""
from typing import List, Optional, Tuple

import numpy as np

from models import DatasetSchema, FeatureColumn, FeatureKind, TargetColumn
from utils.dataset_util import PreparedDataset, window_partition


def make_separable_dataset(n_rows: int = 200, n_features: int = 8, n_classes: int = 3,
                           seed: int = 17, noise: float = 0.15) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows are a per-class feature pattern plus small noise, in shuffled order.

    Rows of one class are strongly correlated with each other and weakly with
    the other classes, so correlation graphs link same-class rows.
    """
    rng = np.random.default_rng(seed)
    patterns = rng.normal(0.0, 1.0, size=(n_classes, n_features))
    patterns -= patterns.mean(axis=1, keepdims=True)
    labels = np.arange(n_rows) % n_classes
    rng.shuffle(labels)
    scale = rng.uniform(1.0, 2.0, size=(n_rows, 1))
    values = patterns[labels] * scale + noise * rng.normal(size=(n_rows, n_features))
    return values, labels.astype(np.int64)


def synthetic_schema(n_features: int, n_classes: int, dataset_id: str = "Synthetic",
                     task_id: str = "label") -> DatasetSchema:
    return DatasetSchema(
        dataset_id=dataset_id,
        feature_columns=[FeatureColumn(name=f"f{i}", kind=FeatureKind.NUMERAL) for i in range(n_features)],
        target_columns=[TargetColumn(task_id=task_id, name="label",
                                     levels=[str(c) for c in range(n_classes)])],
    )


def prepared_from_arrays(values: np.ndarray, labels: np.ndarray, window_size: int = 20,
                         class_names: Optional[List[str]] = None, dataset_id: str = "Synthetic",
                         task_id: str = "label") -> PreparedDataset:
    """Wrap in-memory rows as an already balanced, windowed dataset."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    return PreparedDataset(
        dataset_id=dataset_id,
        task_id=task_id,
        values=values,
        labels=labels,
        feature_names=[f"f{i}" for i in range(values.shape[1])],
        class_names=class_names or [str(c) for c in range(n_classes)],
        windows=window_partition(values.shape[0], window_size),
        n_raw_rows=values.shape[0],
    )
