"""
Dataset ingest for the three logistics tables.

Loads a CSV against its schema, encodes categorical text to integer codes,
extracts task targets, balances classes, standard-scales features and cuts
the retained rows into fixed-size windows.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError
from sklearn.preprocessing import StandardScaler

from errors import DataError, EncodingError, SchemaError
from models import DatasetSchema, TrainConfig, normalize_header, normalize_token

load_dotenv()

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "config" / "schemas.json"


# ============= SCHEMAS =============

def load_schemas(path: Optional[str] = None) -> Dict[str, DatasetSchema]:
    """Read the schema config keyed by dataset_id."""
    path = Path(path) if path else SCHEMA_PATH
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"Schema file {path} is not valid JSON: {exc}") from None
    try:
        return {key: DatasetSchema(**value) for key, value in raw.items()}
    except ValidationError as exc:
        raise SchemaError(f"Schema file {path} is invalid: {exc}") from None


def resolve_dataset_id(name: str, schemas: Dict[str, DatasetSchema]) -> str:
    """Map 'smart-logistics', 'smartlogistics' or 'SmartLogistics' to the schema key."""
    wanted = normalize_header(name)
    for key in schemas:
        if normalize_header(key) == wanted:
            return key
    raise SchemaError(f"Unknown dataset '{name}' (known: {', '.join(schemas)})")


def get_schema(dataset_id: str, schemas_path: Optional[str] = None) -> DatasetSchema:
    schemas = load_schemas(schemas_path)
    return schemas[resolve_dataset_id(dataset_id, schemas)]


def resolve_data_path(schema: DatasetSchema, path: Optional[str] = None) -> Path:
    """Explicit path, else SAGECHAIN_DATA_DIR/<default_filename>."""
    if path:
        return Path(path)
    root = os.getenv("SAGECHAIN_DATA_DIR")
    if not root or not schema.default_filename:
        raise SchemaError(f"No --path given for {schema.dataset_id} and SAGECHAIN_DATA_DIR is not set")
    return Path(root) / schema.default_filename


# ============= TABLES =============

@dataclass
class RawTable:
    """Cells of one dataset restricted to its schema columns."""
    frame: pd.DataFrame
    schema: DatasetSchema
    encoded_columns: Tuple[str, ...] = ()
    rejected_rows: int = 0
    source: Optional[str] = None
    extracted_tasks: Set[str] = field(default_factory=set)

    @property
    def column_names(self) -> List[str]:
        return list(self.frame.columns)

    @property
    def rows(self) -> List[list]:
        return self.frame.values.tolist()

    @property
    def row_count(self) -> int:
        return len(self.frame)


@dataclass(frozen=True)
class ScalerState:
    """Per-column mean and population std fitted on training rows."""
    mean: np.ndarray
    std: np.ndarray
    fitted_rows: int

    def transform(self, values: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (np.asarray(values, dtype=np.float64) - self.mean) / safe
        if not np.all(np.isfinite(out)):
            raise DataError("Non-finite value after standard scaling")
        return out


@dataclass
class FeatureMatrix:
    values: np.ndarray
    feature_names: List[str]
    label_per_task: Dict[str, np.ndarray] = field(default_factory=dict)
    scaler: Optional[ScalerState] = None


@dataclass(frozen=True)
class WindowSet:
    window_size: int
    windows: Tuple[Tuple[int, int], ...]
    n_samples: int

    def __len__(self):
        return len(self.windows)

    @property
    def dropped(self) -> int:
        return self.n_samples - len(self.windows) * self.window_size

    def rows(self, index: int) -> np.ndarray:
        start, stop = self.windows[index]
        return np.arange(start, stop)


def _match_columns(frame: pd.DataFrame, schema: DatasetSchema) -> Dict[str, str]:
    """Schema column name -> CSV header."""
    by_key: Dict[str, str] = {}
    for header in frame.columns:
        by_key.setdefault(normalize_header(header), header)
    matched = {}
    missing = []
    for name in schema.required_columns():
        header = by_key.get(normalize_header(name))
        if header is None:
            missing.append(name)
        else:
            matched[name] = header
    if missing:
        raise SchemaError(f"{schema.dataset_id}: missing required column(s) {missing}")
    return matched


def load_dataset(path, dataset_id: str, schemas_path: Optional[str] = None) -> RawTable:
    """
    Read a CSV against its schema.

    Headers match case- and separator-insensitively. Extra columns are dropped
    with a warning; rows with an unparseable numeric cell are rejected and counted.
    """
    schema = get_schema(dataset_id, schemas_path)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Dataset file not found: {path}")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    matched = _match_columns(frame, schema)
    extra = [h for h in frame.columns if h not in set(matched.values())]
    if extra:
        logger.warning("%s: dropping %d column(s) not in schema: %s", schema.dataset_id, len(extra), extra)
    frame = frame[list(matched.values())].rename(columns={v: k for k, v in matched.items()})
    frame = frame.apply(lambda col: col.str.strip())

    bad = np.zeros(len(frame), dtype=bool)
    for column in schema.feature_columns:
        if column.is_categorical:
            continue
        parsed = pd.to_numeric(frame[column.name], errors="coerce")
        invalid = ~np.isfinite(parsed.to_numpy(dtype=np.float64))
        if invalid.any():
            logger.warning("%s: %d row(s) with unparseable '%s'", schema.dataset_id, int(invalid.sum()), column.name)
        bad |= invalid
        frame[column.name] = parsed
    rejected = int(bad.sum())
    if rejected:
        logger.warning("%s: rejected %d of %d rows", schema.dataset_id, rejected, len(frame))
        frame = frame.loc[~bad].reset_index(drop=True)
    if frame.empty:
        raise DataError(f"{path} has no usable rows for {schema.dataset_id}")

    logger.info("Loaded %s: %d rows from %s", schema.dataset_id, len(frame), path.name)
    return RawTable(frame=frame, schema=schema, rejected_rows=rejected, source=str(path))


# ============= ENCODING =============

def encoding_maps(schema: DatasetSchema) -> Dict[str, Dict[str, int]]:
    """Declared level -> code for every categorical feature and every target."""
    maps = {c.name: {level: code for code, level in enumerate(c.levels)}
            for c in schema.feature_columns if c.is_categorical}
    for target in schema.target_columns:
        maps.setdefault(target.name, {level: code for code, level in enumerate(target.levels)})
    return maps


def decode_level(schema: DatasetSchema, column: str, code: int) -> str:
    for c in schema.feature_columns:
        if c.name == column and c.is_categorical:
            return c.levels[code]
    raise SchemaError(f"{schema.dataset_id}: '{column}' is not a categorical column")


def encode_categoricals(table: RawTable, schema: Optional[DatasetSchema] = None) -> RawTable:
    """Replace categorical text by integer codes; numeric columns are untouched."""
    schema = schema or table.schema
    frame = table.frame.copy()
    encoded = list(table.encoded_columns)
    for column in schema.feature_columns:
        if not column.is_categorical or column.name in encoded:
            continue
        level_map = column.level_map()
        keys = frame[column.name].map(normalize_token)
        codes = keys.map(level_map)
        unknown = codes.isna()
        if unknown.any():
            raise EncodingError(column.name, frame.loc[unknown, column.name].iloc[0])
        frame[column.name] = codes.astype(np.int64)
        encoded.append(column.name)
    return replace(table, frame=frame, schema=schema, encoded_columns=tuple(encoded),
                   extracted_tasks=set(table.extracted_tasks))


def _target_key(value) -> str:
    """Numeric-looking targets compare by value, so '1.0' matches level '1'."""
    text = str(value).strip()
    try:
        number = float(text)
    except ValueError:
        return normalize_token(text)
    if np.isfinite(number) and number == int(number):
        return str(int(number))
    return normalize_token(text)


def extract_target(table: RawTable, task_id: str) -> np.ndarray:
    """Integer labels of one task, in [0, n_classes)."""
    target = table.schema.task(task_id)
    if task_id in table.extracted_tasks:
        raise DataError(f"Task '{task_id}' was already extracted from this table")
    column = table.frame[target.name]
    if target.name in table.encoded_columns:
        labels = column.to_numpy(dtype=np.int64)
        out_of_range = (labels < 0) | (labels >= target.n_classes)
        if out_of_range.any():
            raise EncodingError(target.name, int(labels[out_of_range][0]))
    else:
        level_map = {_target_key(level): code for code, level in enumerate(target.levels)}
        codes = column.map(_target_key).map(level_map)
        unknown = codes.isna()
        if unknown.any():
            raise EncodingError(target.name, column[unknown].iloc[0])
        labels = codes.to_numpy(dtype=np.int64)
    table.extracted_tasks.add(task_id)
    counts = np.bincount(labels, minlength=target.n_classes)
    logger.info("%s/%s class counts: %s", table.schema.dataset_id, task_id,
                dict(zip(target.labels(), counts.tolist())))
    return labels


# ============= BALANCING, SCALING, WINDOWING =============

def balance_classes(labels: Sequence[int], seed: int, n_classes: Optional[int] = None) -> np.ndarray:
    """
    Sorted indices keeping min-class-count rows per class.

    Selection within a class is a seeded uniform subsample.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("balance_classes: no labels")
    n_classes = n_classes or int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.count_nonzero(counts) < 2:
        raise DataError("balance_classes: at least 2 classes are required")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DataError(f"balance_classes: class {int(empty[0])} has zero samples")
    keep = int(counts.min())
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(np.flatnonzero(labels == c), size=keep, replace=False) for c in range(n_classes)]
    retained = np.sort(np.concatenate(chosen))
    logger.info("Balanced %d rows to %d (%d per class)", labels.size, retained.size, keep)
    return retained


def fit_scaler(values: np.ndarray, train_rows: Optional[Sequence[int]] = None) -> ScalerState:
    values = np.asarray(values, dtype=np.float64)
    fit_on = values if train_rows is None else values[np.asarray(train_rows, dtype=np.int64)]
    if fit_on.shape[0] < 2:
        raise DataError(f"standard_scale needs at least 2 rows, got {fit_on.shape[0]}")
    scaler = StandardScaler().fit(fit_on)
    return ScalerState(mean=scaler.mean_.copy(), std=np.sqrt(scaler.var_), fitted_rows=fit_on.shape[0])


def standard_scale(matrix: FeatureMatrix, train_rows: Optional[Sequence[int]] = None) -> FeatureMatrix:
    """Zero mean, unit population std per column; statistics come from `train_rows` only."""
    scaler = fit_scaler(matrix.values, train_rows)
    return replace(matrix, values=scaler.transform(matrix.values), scaler=scaler)


def window_partition(n_samples: int, window_size: int) -> WindowSet:
    """Contiguous disjoint windows; the trailing remainder is dropped."""
    if window_size < 2:
        raise DataError(f"window_size must be at least 2, got {window_size}")
    if window_size > n_samples:
        raise DataError(f"window_size {window_size} exceeds the {n_samples} available rows")
    count = n_samples // window_size
    windows = tuple((i * window_size, (i + 1) * window_size) for i in range(count))
    result = WindowSet(window_size=window_size, windows=windows, n_samples=n_samples)
    if result.dropped:
        logger.info("Windowing dropped %d trailing row(s)", result.dropped)
    return result


# ============= PIPELINE =============

@dataclass
class PreparedDataset:
    """Balanced, unscaled feature rows and labels of one task, cut into windows."""
    dataset_id: str
    task_id: str
    values: np.ndarray
    labels: np.ndarray
    feature_names: List[str]
    class_names: List[str]
    windows: WindowSet
    n_raw_rows: int

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def feature_matrix(table: RawTable, task_id: str) -> FeatureMatrix:
    """Encoded feature columns of a task, with the task's own target column left out."""
    columns = [c.name for c in table.schema.feature_columns_for(task_id)]
    values = table.frame[columns].to_numpy(dtype=np.float64)
    return FeatureMatrix(values=values, feature_names=columns)


def prepare_dataset(config: TrainConfig, schemas_path: Optional[str] = None) -> PreparedDataset:
    """
    load -> encode -> extract target -> balance -> window; scaling happens per fold.

    A `.json` data path is read as an ingest cache sidecar instead of a CSV.
    """
    schema = get_schema(config.dataset_id, schemas_path)
    path = resolve_data_path(schema, config.data_path)
    if is_cache_sidecar(path):
        table = load_cache(path, schemas_path)
        if table.schema.dataset_id != schema.dataset_id:
            raise SchemaError(f"{path.name} caches {table.schema.dataset_id}, not {schema.dataset_id}")
    else:
        table = encode_categoricals(load_dataset(path, schema.dataset_id, schemas_path))
    target = schema.task(config.task_id)
    labels = extract_target(table, config.task_id)
    retained = balance_classes(labels, config.seed, target.n_classes)
    matrix = feature_matrix(table, config.task_id)
    windows = window_partition(retained.size, config.window_size)
    return PreparedDataset(
        dataset_id=schema.dataset_id,
        task_id=config.task_id,
        values=matrix.values[retained],
        labels=labels[retained],
        feature_names=matrix.feature_names,
        class_names=target.labels(),
        windows=windows,
        n_raw_rows=table.row_count,
    )


# ============= INGEST SUMMARY AND CACHE =============

def summarize_table(table: RawTable) -> Dict:
    """Row count, per-task class distribution and encoding maps of an encoded table."""
    tasks = {}
    labels_by_task = {}
    for target in table.schema.target_columns:
        labels = extract_target(table, target.task_id)
        labels_by_task[target.task_id] = labels
        counts = np.bincount(labels, minlength=target.n_classes)
        tasks[target.task_id] = dict(zip(target.labels(), counts.tolist()))
    return {
        "dataset_id": table.schema.dataset_id,
        "row_count": table.row_count,
        "rejected_rows": table.rejected_rows,
        "class_distribution": tasks,
        "encoding_maps": encoding_maps(table.schema),
        "labels": labels_by_task,
    }


def write_cache(table: RawTable, labels_by_task: Dict[str, np.ndarray], out_dir) -> Tuple[Path, str]:
    """
    Persist the encoded matrix as `<dataset>_encoded.bin` (row-major little-endian
    float64: features, then one label column per task) with a JSON sidecar.
    Returns (sidecar path, sha256 of the blob).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    features = [c.name for c in table.schema.feature_columns]
    tasks = [t.task_id for t in table.schema.target_columns]
    matrix = np.column_stack([table.frame[features].to_numpy(dtype=np.float64)]
                             + [np.asarray(labels_by_task[t], dtype=np.float64) for t in tasks])
    blob = np.ascontiguousarray(matrix, dtype="<f8").tobytes()
    checksum = hashlib.sha256(blob).hexdigest()
    stem = f"{table.schema.dataset_id}_encoded"
    (out_dir / f"{stem}.bin").write_bytes(blob)
    sidecar = {
        "dataset_id": table.schema.dataset_id,
        "source": Path(table.source).name if table.source else None,
        "columns": features + [f"target:{t}" for t in tasks],
        "shape": list(matrix.shape),
        "dtype": "float64-le",
        "sha256": checksum,
        "rejected_rows": table.rejected_rows,
        "encoding_maps": encoding_maps(table.schema),
    }
    path = out_dir / f"{stem}.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path, checksum


def load_cache(sidecar_path, schemas_path: Optional[str] = None) -> RawTable:
    """
    Rebuild the encoded table from a `write_cache` sidecar and its `.bin` blob.

    The blob must hash to the sidecar's SHA-256 and its columns must match the
    current schema. Categorical features and every target come back as integer codes.
    """
    sidecar_path = Path(sidecar_path)
    if not sidecar_path.is_file():
        raise FileNotFoundError(f"Cache sidecar not found: {sidecar_path}")
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{sidecar_path.name} is not valid JSON: {e}") from e
    missing = sorted({"dataset_id", "columns", "shape", "sha256"} - set(meta))
    if missing:
        raise DataError(f"{sidecar_path.name} is missing {missing}")

    schema = get_schema(meta["dataset_id"], schemas_path)
    features = [c.name for c in schema.feature_columns]
    expected = features + [f"target:{t.task_id}" for t in schema.target_columns]
    if meta["columns"] != expected:
        raise SchemaError(f"{sidecar_path.name}: cached columns do not match the {schema.dataset_id} schema")

    blob_path = sidecar_path.with_suffix(".bin")
    if not blob_path.is_file():
        raise FileNotFoundError(f"Cache blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    checksum = hashlib.sha256(blob).hexdigest()
    if checksum != meta["sha256"]:
        raise DataError(f"{blob_path.name}: sha256 checksum {checksum[:12]} does not match the sidecar "
                        f"({str(meta['sha256'])[:12]})")
    n_rows, n_cols = meta["shape"]
    if n_cols != len(expected) or len(blob) != n_rows * n_cols * 8:
        raise DataError(f"{blob_path.name}: {len(blob)} bytes do not fit shape {meta['shape']}")

    matrix = np.frombuffer(blob, dtype="<f8").reshape(n_rows, n_cols)
    frame = pd.DataFrame(matrix[:, :len(features)].copy(), columns=features)
    encoded = [c.name for c in schema.feature_columns if c.is_categorical]
    for name in encoded:
        frame[name] = frame[name].to_numpy().astype(np.int64)
    by_key = {normalize_header(name): name for name in features}
    for i, target in enumerate(schema.target_columns):
        labels = matrix[:, len(features) + i].astype(np.int64)
        shared = by_key.get(normalize_header(target.name))
        if shared is None:
            frame[target.name] = labels
            encoded.append(target.name)
        elif shared not in encoded or not np.array_equal(frame[shared].to_numpy(), labels):
            raise DataError(f"{blob_path.name}: cached labels of '{target.task_id}' disagree with column '{shared}'")

    logger.info("Loaded %s: %d rows from cache %s", schema.dataset_id, n_rows, sidecar_path.name)
    return RawTable(frame=frame, schema=schema, encoded_columns=tuple(encoded),
                    rejected_rows=int(meta.get("rejected_rows", 0)), source=str(sidecar_path))


def is_cache_sidecar(path) -> bool:
    return Path(path).suffix.lower() == ".json"
