"""
Pydantic models for schemas, run configuration and experiment reports.
"""
import re
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import SchemaError


def normalize_token(text: str) -> str:
    """Case-fold and drop separators so 'In_Transit', 'in transit' and 'IN-TRANSIT' compare equal."""
    return re.sub(r"[\s_\-]+", "", str(text).strip().casefold())


def normalize_header(text: str) -> str:
    """Header matching ignores case and every non-alphanumeric character."""
    return re.sub(r"[^0-9a-z]+", "", str(text).casefold())


# ============= SCHEMA MODELS =============

class FeatureKind(str, Enum):
    NUMERAL = "numeral"
    DIGIT = "digit"
    CATEGORICAL = "categorical"


class FeatureColumn(BaseModel):
    """One feature column of a dataset schema."""
    name: str = Field(..., description="Column header as it appears in the CSV")
    kind: FeatureKind
    levels: List[str] = Field(default_factory=list, description="Declared levels, code = position")

    @model_validator(mode="after")
    def validate_levels(self):
        if self.kind == FeatureKind.CATEGORICAL:
            if not self.levels:
                raise ValueError(f"Categorical column '{self.name}' declares no levels")
            normalized = [normalize_token(level) for level in self.levels]
            if len(set(normalized)) != len(normalized):
                raise ValueError(f"Levels of '{self.name}' collide after normalization")
        elif self.levels:
            raise ValueError(f"Numeric column '{self.name}' cannot declare levels")
        return self

    @property
    def is_categorical(self) -> bool:
        return self.kind == FeatureKind.CATEGORICAL

    def level_map(self) -> Dict[str, int]:
        return {normalize_token(level): code for code, level in enumerate(self.levels)}


class TargetColumn(BaseModel):
    """One classification task of a dataset schema."""
    task_id: str
    name: str = Field(..., description="Column header holding the target")
    levels: List[str] = Field(..., min_length=2, description="Raw values, code = position")
    class_names: Optional[List[str]] = None

    @property
    def n_classes(self) -> int:
        return len(self.levels)

    @model_validator(mode="after")
    def validate_levels(self):
        normalized = [normalize_token(level) for level in self.levels]
        if len(set(normalized)) != len(normalized):
            raise ValueError(f"Target levels of '{self.task_id}' collide after normalization")
        if self.class_names is not None and len(self.class_names) != len(self.levels):
            raise ValueError(f"class_names of '{self.task_id}' must match its levels")
        return self

    def level_map(self) -> Dict[str, int]:
        return {normalize_token(level): code for code, level in enumerate(self.levels)}

    def labels(self) -> List[str]:
        return list(self.class_names or self.levels)


class DatasetSchema(BaseModel):
    """Columns and tasks of one dataset, keyed by dataset_id in config/schemas.json."""
    dataset_id: str
    default_filename: Optional[str] = None
    feature_columns: List[FeatureColumn]
    target_columns: List[TargetColumn]

    @model_validator(mode="after")
    def validate_unique(self):
        task_ids = [t.task_id for t in self.target_columns]
        if len(set(task_ids)) != len(task_ids):
            raise ValueError(f"Duplicate task ids in schema {self.dataset_id}")
        headers = [normalize_header(c.name) for c in self.feature_columns]
        if len(set(headers)) != len(headers):
            raise ValueError(f"Duplicate feature columns in schema {self.dataset_id}")
        return self

    def task(self, task_id: str) -> TargetColumn:
        for target in self.target_columns:
            if target.task_id == task_id:
                return target
        known = ", ".join(t.task_id for t in self.target_columns)
        raise SchemaError(f"Unknown task '{task_id}' for {self.dataset_id} (known: {known})")

    def feature_columns_for(self, task_id: str) -> List[FeatureColumn]:
        """Feature columns with the task's own target column removed."""
        target = normalize_header(self.task(task_id).name)
        return [c for c in self.feature_columns if normalize_header(c.name) != target]

    def required_columns(self) -> List[str]:
        names = [c.name for c in self.feature_columns]
        for target in self.target_columns:
            if normalize_header(target.name) not in {normalize_header(n) for n in names}:
                names.append(target.name)
        return names


# ============= RUN CONFIGURATION =============

class Variant(str, Enum):
    H_GSN = "h-gsn"
    H_GATN = "h-gatn"
    GSN = "gsn"
    GATN = "gatn"

    @property
    def is_hybrid(self) -> bool:
        return self in (Variant.H_GSN, Variant.H_GATN)

    @property
    def uses_attention(self) -> bool:
        return self in (Variant.H_GATN, Variant.GATN)


class TrainConfig(BaseModel):
    """Training variables; defaults are the tuned optima."""
    model_config = ConfigDict(extra="forbid")

    dataset_id: str = Field(..., description="Schema key, e.g. SmartLogistics")
    task_id: str = Field(..., description="Task key within the schema")
    variant: Variant = Variant.H_GSN
    data_path: Optional[str] = Field(None, description="CSV path; defaults to SAGECHAIN_DATA_DIR/<default_filename>")
    epochs: int = Field(400, ge=1)
    window_size: int = Field(20, ge=2)
    threshold: float = Field(0.5, ge=0.0, lt=1.0)
    leak_alpha: float = Field(0.1, ge=0.0, lt=1.0)
    lr_graph: float = Field(0.001, ge=0.0)
    lr_seq: float = Field(0.0001, ge=0.0)
    weight_decay: float = Field(4e-4, ge=0.0)
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    k_folds: int = Field(10, ge=2)
    seed: int = 17
    aggregator: Literal["mean", "pool", "lstm"] = "mean"
    normalization: Literal["batchnorm", "l2"] = "batchnorm"
    convolutional_variant: bool = Field(False, description="W*Mean(self+neighbors) without concatenation")
    graph_layers: int = Field(4, ge=1)
    conv_layers: int = Field(2, ge=1)
    lstm_layers: int = Field(5, ge=1)
    lstm_hidden: Optional[int] = Field(None, ge=1, description="Defaults to the feature count")
    heads: int = Field(1, ge=1)
    gat_leak: float = Field(0.2, ge=0.0, lt=1.0, description="Negative slope of the attention leaky_relu")
    combiner: Literal["mean", "graph"] = "mean"
    val_fraction: float = Field(0.1, ge=0.0, le=0.5)
    max_grad_norm: Optional[float] = Field(None, gt=0.0)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    knn_k: int = Field(5, ge=1)
    logistic_epochs: int = Field(200, ge=0)
    logistic_lr: float = Field(0.1, gt=0.0)
    export_embeddings: bool = False
    dump_graphs: bool = Field(False, description="Write each fold's window graphs under fold_<i>/graphs")

    @field_validator("variant", mode="before")
    @classmethod
    def parse_variant(cls, v):
        if isinstance(v, str):
            return v.strip().lower().replace("_", "-")
        return v

    @field_validator("loss_weights", mode="before")
    @classmethod
    def parse_weights(cls, v):
        if isinstance(v, str):
            v = [float(x) for x in v.split(",")]
        return v

    @field_validator("loss_weights")
    @classmethod
    def validate_weights(cls, v):
        if any(w < 0 for w in v):
            raise ValueError("loss weights must be non-negative")
        return v


class CliConfig(TrainConfig):
    """Config file merged with command-line flags; flags win."""
    out: str = "runs"
    schemas: Optional[str] = None
    layers: List[int] = Field(default_factory=lambda: [2, 3, 4, 5])
    parallel_folds: int = Field(1, ge=1)
    verbose: int = Field(0, ge=0)

    @field_validator("layers", mode="before")
    @classmethod
    def parse_layers(cls, v):
        if isinstance(v, str):
            v = [int(x) for x in v.split(",") if x.strip()]
        return v

    @field_validator("layers")
    @classmethod
    def validate_layers(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("layers must be a non-empty list of positive counts")
        return v

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.model_dump(include=set(TrainConfig.model_fields)))


# ============= REPORT MODELS =============

class MetricsRow(BaseModel):
    """Accuracy and macro precision/recall/F1 as percentages."""
    accuracy: float = Field(..., ge=0.0, le=100.0)
    precision: float = Field(..., ge=0.0, le=100.0)
    recall: float = Field(..., ge=0.0, le=100.0)
    f1: float = Field(..., ge=0.0, le=100.0)
    per_class_precision: List[float]
    per_class_recall: List[float]
    per_class_f1: List[float]
    support: List[int]
    zero_division_classes: List[int] = Field(default_factory=list,
                                             description="Classes whose precision or recall had a zero denominator")


class ConfusionMatrix(BaseModel):
    """Rows are true classes, columns predicted classes."""
    counts: List[List[int]]

    @field_validator("counts")
    @classmethod
    def validate_counts(cls, v):
        if not v or any(len(row) != len(v) for row in v):
            raise ValueError("confusion counts must be a non-empty square matrix")
        if any(c < 0 for row in v for c in row):
            raise ValueError("confusion counts must be non-negative")
        return v

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


class HistoryRecord(BaseModel):
    """Per-epoch curves of one fold; wall-clock time lives in RunTimings."""
    total_loss: List[float] = Field(default_factory=list)
    graph_loss: List[float] = Field(default_factory=list)
    conv_loss: List[float] = Field(default_factory=list)
    lstm_loss: List[float] = Field(default_factory=list)
    train_acc: List[float] = Field(default_factory=list)
    val_acc: List[float] = Field(default_factory=list)


class BaselineScores(BaseModel):
    majority: float
    knn: float
    logistic: float


class FoldResult(BaseModel):
    fold: int
    train_windows: List[int]
    test_windows: List[int]
    best_epoch: int
    metrics: MetricsRow
    confusion: ConfusionMatrix
    history: HistoryRecord
    baselines: BaselineScores


class RunTimings(BaseModel):
    """Wall-clock data kept out of report.json so reruns stay byte-identical."""
    started_at: str
    finished_at: str
    seconds_per_epoch: List[List[float]]


class ExperimentReport(BaseModel):
    config: TrainConfig
    class_names: List[str]
    feature_names: List[str]
    n_rows: int
    n_windows: int
    folds: List[FoldResult]
    aggregate: MetricsRow
    aggregate_confusion: ConfusionMatrix
    baselines: BaselineScores
    embeddings: Optional[Dict[str, List[List[float]]]] = None
    timings: Optional[RunTimings] = Field(None, description="Written to run_log.json, never to report.json")


class AblationRow(BaseModel):
    layers: int
    accuracy: float
    seconds_per_epoch: float
