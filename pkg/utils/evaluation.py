"""
Confusion matrices, macro metrics, classical baselines and the graph-depth
ablation.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.neighbors import KNeighborsClassifier

from errors import DataError, DimensionError
from models import AblationRow, ConfusionMatrix, MetricsRow, TrainConfig
from utils.tensor_engine import Tensor, add, backward, cross_entropy, log_softmax, matmul, parameter

logger = logging.getLogger(__name__)


# ============= METRICS =============

def confusion(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> ConfusionMatrix:
    """counts[true][pred]."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise DimensionError("confusion: predictions and labels differ in length", preds.shape, labels.shape)
    for name, values in (("prediction", preds), ("label", labels)):
        if values.size and (values.min() < 0 or values.max() >= n_classes):
            bad = values[(values < 0) | (values >= n_classes)][0]
            raise DataError(f"confusion: {name} {int(bad)} outside [0, {n_classes})")
    counts = sk_confusion_matrix(labels, preds, labels=list(range(n_classes))) if preds.size \
        else np.zeros((n_classes, n_classes), dtype=np.int64)
    return ConfusionMatrix(counts=counts.astype(int).tolist())


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsRow:
    """Accuracy plus macro precision/recall/F1, all as percentages."""
    counts = np.asarray(cm.counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("metrics_from_confusion: the confusion matrix is empty")
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2.0 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    flagged = np.flatnonzero((predicted == 0) | (actual == 0)).tolist()
    return MetricsRow(
        accuracy=float(100.0 * tp.sum() / total),
        precision=float(100.0 * precision.mean()),
        recall=float(100.0 * recall.mean()),
        f1=float(100.0 * f1.mean()),
        per_class_precision=(100.0 * precision).tolist(),
        per_class_recall=(100.0 * recall).tolist(),
        per_class_f1=(100.0 * f1).tolist(),
        support=actual.astype(int).tolist(),
        zero_division_classes=flagged,
    )


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(100.0 * np.mean(preds == labels))


# ============= BASELINES =============

def majority_baseline(train_labels: Sequence[int], test_labels: Sequence[int]) -> float:
    """Accuracy of always predicting the most frequent training class (smallest index on ties)."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    majority = int(np.argmax(np.bincount(train_labels)))
    return accuracy(np.full(len(test_labels), majority), test_labels)


def knn_baseline(train_x: np.ndarray, train_y: Sequence[int], test_x: np.ndarray, k: int = 5) -> np.ndarray:
    """Euclidean k-nearest-neighbor majority vote; ties go to the smallest class index."""
    train_x = np.asarray(train_x, dtype=np.float64)
    if k < 1 or k > train_x.shape[0]:
        raise DataError(f"knn_baseline: k={k} with {train_x.shape[0]} training rows")
    model = KNeighborsClassifier(n_neighbors=k, algorithm="brute", metric="euclidean")
    model.fit(train_x, np.asarray(train_y, dtype=np.int64))
    return model.predict(np.asarray(test_x, dtype=np.float64))


def logistic_loss(weight: Tensor, bias: Tensor, x: np.ndarray, y: Sequence[int]) -> Tensor:
    """Mean multinomial cross-entropy of softmax(x W + b)."""
    return cross_entropy(log_softmax(add(matmul(Tensor(x), weight), bias), axis=1), y)


def fit_logistic(train_x: np.ndarray, train_y: Sequence[int], epochs: int = 200, lr: float = 0.1,
                 n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent from zero weights; returns (W, b)."""
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    n_classes = n_classes or int(train_y.max()) + 1
    weight = parameter(np.zeros((train_x.shape[1], n_classes)))
    bias = parameter(np.zeros(n_classes))
    for _ in range(epochs):
        loss = logistic_loss(weight, bias, train_x, train_y)
        backward(loss, [weight, bias])
        weight.data = weight.data - lr * weight.grad
        bias.data = bias.data - lr * bias.grad
    return weight.data, bias.data


def logistic_baseline(train_x: np.ndarray, train_y: Sequence[int], test_x: np.ndarray, epochs: int = 200,
                      lr: float = 0.1, n_classes: Optional[int] = None) -> np.ndarray:
    weight, bias = fit_logistic(train_x, train_y, epochs, lr, n_classes)
    logits = np.asarray(test_x, dtype=np.float64) @ weight + bias
    return np.argmax(logits, axis=1)


# ============= ABLATION =============

def layer_ablation(config: TrainConfig, layer_counts: Sequence[int] = (2, 3, 4, 5), prepared=None,
                   parallel_folds: int = 1, schemas_path: Optional[str] = None) -> List[AblationRow]:
    """One full experiment per graph depth: aggregate accuracy and mean seconds per epoch."""
    from utils.dataset_util import prepare_dataset
    from utils.hybrid_trainer import run_experiment

    prepared = prepared or prepare_dataset(config, schemas_path)
    rows = []
    for layers in layer_counts:
        run_config = config.model_copy(update={"graph_layers": int(layers)})
        report = run_experiment(run_config, prepared=prepared, parallel_folds=parallel_folds)
        seconds = [s for fold in report.timings.seconds_per_epoch for s in fold]
        rows.append(AblationRow(layers=int(layers), accuracy=report.aggregate.accuracy,
                                seconds_per_epoch=float(np.mean(seconds)) if seconds else 0.0))
        logger.info("Ablation %d layers: accuracy %.2f, %.4fs/epoch", layers, rows[-1].accuracy,
                    rows[-1].seconds_per_epoch)
    return rows
