"""
Hybrid model assembly, the summed three-head loss, and k-fold training.

H-GSN runs a GraphSAGE stack next to a convolutional branch and an LSTM
branch, each with its own log-softmax head. H-GatN swaps the SAGE stack for
graph attention; GSN and GatN keep only the graph stack and its head.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold

from errors import ConfigError, DataError, DimensionError, SchemaError, TrainingAborted
from models import (
    BaselineScores, ConfusionMatrix, DatasetSchema, ExperimentReport, FoldResult, HistoryRecord, RunTimings,
    TrainConfig, normalize_header,
)
from utils.checkpoint_util import save_checkpoint
from utils.dataset_util import PreparedDataset, fit_scaler, prepare_dataset
from utils.evaluation import (
    accuracy, confusion, knn_baseline, logistic_baseline, majority_baseline, metrics_from_confusion,
)
from utils.geometric_layers import GatLayer, NegSampleBatch, SageLayer, unsupervised_graph_loss
from utils.graph_builder import SampleGraph, build_window_graphs, dump_graphs
from utils.optimizer import Adam, ParamGroup
from utils.sequence_branches import ConvBranch, LstmBranch
from utils.tensor_engine import (
    Linear, Module, Tensor, add, backward, cross_entropy, dropout, log_softmax, mul, slice_, take,
)

logger = logging.getLogger(__name__)

HEADS = ("graph", "conv", "lstm")
MIN_VAL_WINDOWS = 3


# ============= MODEL =============

def graph_dims(n_features: int, n_classes: int, n_layers: int) -> List[int]:
    """
    Output width of each graph layer: keep the feature width, narrow to the
    midpoint, then stay at the class count (8 features, 3 classes, 4 layers
    gives [8, 5, 3, 3]).
    """
    if n_layers < 1:
        raise ConfigError(f"graph_layers must be at least 1, got {n_layers}")
    if n_layers == 1:
        return [n_classes]
    if n_layers == 2:
        return [n_features, n_classes]
    return [n_features, (n_features + n_classes) // 2] + [n_classes] * (n_layers - 2)


class HybridModel(Module):
    """Graph stack with its head, plus conv and LSTM branches for the hybrid variants."""

    def __init__(self, config: TrainConfig, n_features: int, n_classes: int, seed: Optional[int] = None):
        seed = config.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        self.variant = config.variant
        self.n_features = n_features
        self.n_classes = n_classes
        self.combiner = config.combiner
        self.dropout_rate = config.dropout
        self.dims = graph_dims(n_features, n_classes, config.graph_layers)

        layers = []
        in_dim = n_features
        for i, out_dim in enumerate(self.dims):
            last = i == len(self.dims) - 1
            if config.variant.uses_attention:
                layer = GatLayer(in_dim, out_dim, rng, heads=config.heads,
                                 mode="average" if last else "concat", normalization=config.normalization,
                                 leak=config.gat_leak)
            else:
                layer = SageLayer(in_dim, out_dim, rng, aggregator=config.aggregator,
                                  normalization=config.normalization,
                                  convolutional_variant=config.convolutional_variant, seed=seed + 1000 * i)
            layers.append(layer)
            in_dim = layer.out_dim
        self.graph_layers = layers
        self.graph_head = Linear(in_dim, n_classes, rng)

        self.conv_branch = None
        self.lstm_branch = None
        if config.variant.is_hybrid:
            self.conv_branch = ConvBranch(n_features, n_classes, rng, n_layers=config.conv_layers)
            if config.window_size < self.conv_branch.min_length():
                raise ConfigError(f"window_size {config.window_size} is shorter than the "
                                  f"{self.conv_branch.min_length()} rows {config.conv_layers} conv layers need")
            self.lstm_branch = LstmBranch(n_features, n_classes, rng, n_layers=config.lstm_layers,
                                          hidden=config.lstm_hidden)

    @property
    def head_names(self) -> Tuple[str, ...]:
        return HEADS if self.variant.is_hybrid else ("graph",)

    def graph_parameters(self) -> Dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.graph_layers):
            params.update({f"graph_layers.{i}.{k}": p for k, p in layer.named_parameters()})
        params.update({f"graph_head.{k}": p for k, p in self.graph_head.named_parameters()})
        return params

    def seq_parameters(self) -> Dict[str, Tensor]:
        params = {}
        for name in ("conv_branch", "lstm_branch"):
            branch = getattr(self, name)
            if branch is not None:
                params.update({f"{name}.{k}": p for k, p in branch.named_parameters()})
        return params

    def embed(self, graph: SampleGraph) -> List[Tensor]:
        """Output of every graph layer, in order."""
        h = Tensor(graph.node_features)
        if h.shape[1] != self.n_features:
            raise DimensionError(f"Model was built for {self.n_features} features", h.shape)
        outputs = []
        for layer in self.graph_layers:
            h = layer(graph, h)
            outputs.append(h)
        return outputs

    def forward(self, graph: SampleGraph, rng: Optional[np.random.Generator] = None) -> Dict[str, Tensor]:
        """Per-head (n x C) log-probabilities."""
        h = self.embed(graph)[-1]
        if self.training and self.dropout_rate > 0 and rng is not None:
            h = dropout(h, self.dropout_rate, rng)
        out = {"graph": log_softmax(self.graph_head(h), axis=1)}
        if self.variant.is_hybrid:
            x = Tensor(graph.node_features)
            out["conv"] = self.conv_branch(x)
            out["lstm"] = self.lstm_branch(x)
        return out

    def describe(self) -> Dict:
        return {
            "variant": self.variant.value,
            "graph_dims": [self.n_features] + self.dims,
            "parameters": {name: list(p.shape) for name, p in self.named_parameters()},
            "parameter_count": self.parameter_count(),
        }


def build_model(config: TrainConfig, schema: DatasetSchema, seed: Optional[int] = None) -> HybridModel:
    """Instantiate the variant for a dataset/task with seeded Glorot init."""
    if normalize_header(config.dataset_id) != normalize_header(schema.dataset_id):
        raise SchemaError(f"Config dataset '{config.dataset_id}' does not match schema '{schema.dataset_id}'")
    target = schema.task(config.task_id)
    n_features = len(schema.feature_columns_for(config.task_id))
    return HybridModel(config, n_features, target.n_classes, seed=seed)


# ============= LOSS AND INFERENCE =============

def weighted_loss(targets: Sequence[int], outputs: Dict[str, Tensor],
                  weights: Sequence[float]) -> Tuple[Tensor, Dict[str, float]]:
    """Sum of lambda-weighted cross-entropies over the heads present; also returns each head's CE."""
    shapes = {o.shape for o in outputs.values()}
    if len(shapes) != 1:
        raise DimensionError("All heads must emit the same (n x C) shape", *sorted(shapes))
    total = None
    parts = {}
    for name, weight in zip(HEADS, weights):
        if name not in outputs:
            continue
        ce = cross_entropy(outputs[name], targets)
        parts[name] = ce.item()
        if weight == 0.0 and total is not None:
            continue
        term = mul(ce, float(weight))
        total = term if total is None else add(total, term)
    return total, parts


def total_loss(targets: Sequence[int], out_graph: Tensor, out_conv: Optional[Tensor] = None,
               out_lstm: Optional[Tensor] = None, weights: Sequence[float] = (1.0, 1.0, 1.0)) -> Tensor:
    """l1*CE(graph) + l2*CE(conv) + l3*CE(lstm)."""
    outputs = {"graph": out_graph}
    if out_conv is not None:
        outputs["conv"] = out_conv
    if out_lstm is not None:
        outputs["lstm"] = out_lstm
    return weighted_loss(targets, outputs, weights)[0]


def combine_heads(outputs: Dict[str, Tensor], combiner: str = "mean") -> np.ndarray:
    """Element-wise mean of the heads' log-probabilities, or the graph head alone."""
    if combiner == "graph" or len(outputs) == 1:
        return outputs["graph"].data.copy()
    return np.mean([outputs[name].data for name in HEADS if name in outputs], axis=0)


def predict(model: HybridModel, graph: SampleGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode (per-node class, per-node combined log-probabilities)."""
    was_training = model.training
    model.eval()
    try:
        log_probs = combine_heads(model.forward(graph), model.combiner)
    finally:
        model.train(was_training)
    return np.argmax(log_probs, axis=1), log_probs


# ============= FOLDS =============

@dataclass(frozen=True)
class FoldSplit:
    """Test window indices of each fold; the folds partition all windows."""
    folds: Tuple[Tuple[int, ...], ...]
    n_windows: int

    def __len__(self):
        return len(self.folds)

    def test(self, fold: int) -> List[int]:
        return list(self.folds[fold])

    def train(self, fold: int) -> List[int]:
        held_out = set(self.folds[fold])
        return [w for w in range(self.n_windows) if w not in held_out]


def kfold_split(n_windows: int, k: int = 10, seed: int = 17) -> FoldSplit:
    """Seeded shuffle, then contiguous partition into k folds over windows."""
    if k < 2:
        raise DataError(f"k_folds must be at least 2, got {k}")
    if n_windows < k:
        raise DataError(f"{n_windows} windows cannot fill {k} folds")
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    folds = tuple(tuple(int(i) for i in test) for _, test in splitter.split(np.arange(n_windows)))
    return FoldSplit(folds=folds, n_windows=n_windows)


# ============= TRAINING =============

@dataclass
class TrainHistory:
    total_loss: List[float] = field(default_factory=list)
    graph_loss: List[float] = field(default_factory=list)
    conv_loss: List[float] = field(default_factory=list)
    lstm_loss: List[float] = field(default_factory=list)
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self):
        return len(self.total_loss)

    def to_record(self) -> HistoryRecord:
        return HistoryRecord(total_loss=self.total_loss, graph_loss=self.graph_loss, conv_loss=self.conv_loss,
                             lstm_loss=self.lstm_loss, train_acc=self.train_acc, val_acc=self.val_acc)


def make_optimizer(model: HybridModel, config: TrainConfig) -> Adam:
    return Adam([ParamGroup("graph", model.graph_parameters(), config.lr_graph),
                 ParamGroup("seq", model.seq_parameters(), config.lr_seq)],
                weight_decay=config.weight_decay, max_grad_norm=config.max_grad_norm)


def evaluate_graphs(model: HybridModel, graphs: Sequence[SampleGraph]) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenated (predictions, labels) over graphs."""
    if not graphs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    preds = [predict(model, g)[0] for g in graphs]
    return np.concatenate(preds), np.concatenate([g.labels for g in graphs])


def _diagnostics(model: HybridModel, graph: SampleGraph, parts: Dict[str, float]) -> Dict:
    return {
        "window": graph.window_index,
        "head_losses": {k: float(v) for k, v in parts.items()},
        "parameter_norms": {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()},
        "non_finite_parameters": [name for name, p in model.named_parameters() if not np.all(np.isfinite(p.data))],
    }


def train_fold(model: HybridModel, train_graphs: Sequence[SampleGraph], val_graphs: Sequence[SampleGraph],
               config: TrainConfig, fold: int = 0,
               optimizer: Optional[Adam] = None) -> Tuple[HybridModel, TrainHistory]:
    """
    One Adam step per training window, windows shuffled each epoch.

    The returned model holds the parameters of the epoch with the best
    validation accuracy (train accuracy when there is no validation set).
    """
    if not train_graphs:
        raise DataError(f"Fold {fold} has no training windows")
    optimizer = optimizer or make_optimizer(model, config)
    params = optimizer.all_params()
    drop_rng = np.random.default_rng([config.seed, fold, 1])
    history = TrainHistory()
    best_acc = -1.0
    best_state = model.state_dict()

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        order = np.random.default_rng([config.seed, fold, epoch]).permutation(len(train_graphs))
        sums = {"total": 0.0, "graph": 0.0, "conv": 0.0, "lstm": 0.0}
        correct = 0
        seen = 0
        for idx in order:
            graph = train_graphs[idx]
            outputs = model.forward(graph, drop_rng)
            loss, parts = weighted_loss(graph.labels, outputs, config.loss_weights)
            value = loss.item()
            if not np.isfinite(value):
                logger.error("Non-finite loss in fold %d epoch %d window %d", fold, epoch, graph.window_index)
                raise TrainingAborted("Non-finite training loss", fold=fold, epoch=epoch,
                                      diagnostics=_diagnostics(model, graph, parts))
            backward(loss, params)
            optimizer.step()
            sums["total"] += value
            for name, v in parts.items():
                sums[name] += v
            preds = np.argmax(combine_heads(outputs, model.combiner), axis=1)
            correct += int((preds == graph.labels).sum())
            seen += graph.n_nodes

        n = len(train_graphs)
        train_acc = 100.0 * correct / seen
        if val_graphs:
            preds, labels = evaluate_graphs(model, val_graphs)
            val_acc = accuracy(preds, labels)
        else:
            val_acc = train_acc
        history.total_loss.append(sums["total"] / n)
        history.graph_loss.append(sums["graph"] / n)
        history.conv_loss.append(sums["conv"] / n)
        history.lstm_loss.append(sums["lstm"] / n)
        history.train_acc.append(train_acc)
        history.val_acc.append(val_acc)
        history.seconds.append(time.perf_counter() - started)
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = model.state_dict()
            history.best_epoch = epoch
        logger.debug("fold %d epoch %d loss %.5f train %.1f val %.1f", fold, epoch,
                     history.total_loss[-1], train_acc, val_acc)

    model.load_state_dict(best_state)
    return model, history


def pretrain_embeddings(model: HybridModel, graphs: Sequence[SampleGraph],
                        batches: Sequence[Tuple[int, NegSampleBatch]], epochs: int = 1,
                        lr: float = 0.001) -> List[float]:
    """
    Optimise the graph stack on the negative-sampling loss over caller-supplied
    (graph index, batch) pairs. Returns the mean loss per epoch.
    """
    if not batches:
        raise DataError("pretrain_embeddings needs at least one (graph, batch) pair")
    optimizer = Adam([ParamGroup("graph", model.graph_parameters(), lr)])
    params = optimizer.all_params()
    model.train()
    losses = []
    for _ in range(epochs):
        total = 0.0
        for graph_index, batch in batches:
            z = model.embed(graphs[graph_index])[-1]
            loss = unsupervised_graph_loss(slice_(z, batch.anchor), slice_(z, batch.positive),
                                           take(z, list(batch.negatives), axis=0))
            backward(loss, params)
            optimizer.step()
            total += loss.item()
        losses.append(total / len(batches))
    return losses


# ============= EXPERIMENT =============

@dataclass
class FoldOutcome:
    result: FoldResult
    seconds: List[float]
    embeddings: Optional[Dict[str, List[List[float]]]] = None


def _split_validation(train_windows: List[int], fraction: float, seed: int, fold: int) -> Tuple[List[int], List[int]]:
    """
    Hold out round(fraction * n) training windows for model selection. Folds that
    would hold out fewer than MIN_VAL_WINDOWS keep every window for training and
    select on train accuracy instead.
    """
    n_val = int(round(fraction * len(train_windows)))
    if n_val < MIN_VAL_WINDOWS or n_val >= len(train_windows):
        if 0 < n_val < MIN_VAL_WINDOWS:
            logger.info("Fold %d: %d validation window(s) is below %d; selecting on train accuracy",
                        fold, n_val, MIN_VAL_WINDOWS)
        return train_windows, []
    shuffled = np.random.default_rng([seed, fold, 2]).permutation(train_windows)
    val = sorted(int(w) for w in shuffled[:n_val])
    held = set(val)
    return [w for w in train_windows if w not in held], val


def run_fold(config: TrainConfig, prepared: PreparedDataset, split: FoldSplit, fold: int,
             out_dir: Optional[str] = None) -> FoldOutcome:
    """Scale on the fold's training rows, build graphs, train, evaluate the held-out windows."""
    logger.info("Fold %d/%d started", fold + 1, len(split))
    windows = prepared.windows
    test_windows = split.test(fold)
    fit_windows, val_windows = _split_validation(split.train(fold), config.val_fraction, config.seed, fold)
    train_side = fit_windows + val_windows
    train_rows = np.concatenate([windows.rows(w) for w in train_side])
    test_rows = np.concatenate([windows.rows(w) for w in test_windows])

    scaler = fit_scaler(prepared.values, train_rows)
    scaled = scaler.transform(prepared.values)
    graphs = build_window_graphs(scaled, prepared.labels, windows, config.threshold, config.leak_alpha)
    if config.dump_graphs and out_dir is not None:
        dump_graphs(graphs, Path(out_dir) / f"fold_{fold}" / "graphs")

    model = HybridModel(config, prepared.n_features, prepared.n_classes, seed=config.seed + fold)
    optimizer = make_optimizer(model, config)
    model, history = train_fold(model, [graphs[w] for w in fit_windows], [graphs[w] for w in val_windows],
                                config, fold=fold, optimizer=optimizer)

    test_graphs = [graphs[w] for w in test_windows]
    preds, labels = evaluate_graphs(model, test_graphs)
    cm = confusion(preds, labels, prepared.n_classes)
    metrics = metrics_from_confusion(cm)

    train_x, train_y = scaled[train_rows], prepared.labels[train_rows]
    test_x, test_y = scaled[test_rows], prepared.labels[test_rows]
    baselines = BaselineScores(
        majority=majority_baseline(train_y, test_y),
        knn=accuracy(knn_baseline(train_x, train_y, test_x, min(config.knn_k, len(train_y))), test_y),
        logistic=accuracy(logistic_baseline(train_x, train_y, test_x, config.logistic_epochs,
                                            config.logistic_lr, prepared.n_classes), test_y),
    )

    embeddings = None
    if config.export_embeddings and fold == 0:
        model.eval()
        per_layer = [model.embed(g) for g in test_graphs]
        embeddings = {f"layer{i + 1}": np.concatenate([layers[i].data for layers in per_layer]).tolist()
                      for i in range(len(model.graph_layers))}

    if out_dir is not None:
        save_checkpoint(Path(out_dir) / f"fold_{fold}" / "model", model, optimizer,
                        meta={"fold": fold, "best_epoch": history.best_epoch, **model.describe()})

    logger.info("Fold %d/%d finished: accuracy %.2f (best epoch %d)", fold + 1, len(split),
                metrics.accuracy, history.best_epoch)
    result = FoldResult(fold=fold, train_windows=sorted(train_side), test_windows=test_windows,
                        best_epoch=history.best_epoch, metrics=metrics, confusion=cm,
                        history=history.to_record(), baselines=baselines)
    return FoldOutcome(result=result, seconds=history.seconds, embeddings=embeddings)


def _run_fold_job(args) -> FoldOutcome:
    return run_fold(*args)


def run_experiment(config: TrainConfig, prepared: Optional[PreparedDataset] = None,
                   out_dir: Optional[str] = None, parallel_folds: int = 1,
                   schemas_path: Optional[str] = None) -> ExperimentReport:
    """ingest -> balance -> window -> k folds of (scale, graphs, train, evaluate) -> aggregate."""
    started_at = datetime.now(timezone.utc).isoformat()
    prepared = prepared or prepare_dataset(config, schemas_path)
    split = kfold_split(len(prepared.windows), config.k_folds, config.seed)
    jobs = [(config, prepared, split, fold, out_dir) for fold in range(len(split))]

    if parallel_folds > 1:
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            outcomes = list(pool.map(_run_fold_job, jobs))
    else:
        outcomes = [_run_fold_job(job) for job in jobs]
    outcomes.sort(key=lambda o: o.result.fold)

    folds = [o.result for o in outcomes]
    total = np.sum([np.asarray(f.confusion.counts) for f in folds], axis=0)
    aggregate_cm = ConfusionMatrix(counts=total.tolist())
    baselines = BaselineScores(
        majority=float(np.mean([f.baselines.majority for f in folds])),
        knn=float(np.mean([f.baselines.knn for f in folds])),
        logistic=float(np.mean([f.baselines.logistic for f in folds])),
    )
    report = ExperimentReport(
        config=config,
        class_names=prepared.class_names,
        feature_names=prepared.feature_names,
        n_rows=int(prepared.values.shape[0]),
        n_windows=len(prepared.windows),
        folds=folds,
        aggregate=metrics_from_confusion(aggregate_cm),
        aggregate_confusion=aggregate_cm,
        baselines=baselines,
        embeddings=next((o.embeddings for o in outcomes if o.embeddings is not None), None),
        timings=RunTimings(started_at=started_at, finished_at=datetime.now(timezone.utc).isoformat(),
                           seconds_per_epoch=[o.seconds for o in outcomes]),
    )
    logger.info("%s %s/%s aggregate accuracy %.2f", config.variant.value, prepared.dataset_id,
                prepared.task_id, report.aggregate.accuracy)
    return report
