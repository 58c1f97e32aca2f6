"""
Report artifacts: report.json, metric and confusion CSVs, per-fold training
curves, optional embeddings, and plain-text summaries for the terminal.
"""
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd
from pydantic import ValidationError

from errors import ReportError
from models import AblationRow, ConfusionMatrix, ExperimentReport, MetricsRow, RunTimings

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "total_loss", "graph_loss", "conv_loss", "lstm_loss", "train_acc", "val_acc", "seconds"]


def _metrics_row(scope: str, m: MetricsRow) -> Dict:
    return {"scope": scope, "accuracy": m.accuracy, "precision": m.precision, "recall": m.recall, "f1": m.f1}


def confusion_frame(cm: ConfusionMatrix, class_names: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame(cm.counts, columns=list(class_names))
    frame.insert(0, "true\\pred", list(class_names))
    return frame


def render_report(report: ExperimentReport, out_dir) -> List[Path]:
    """Write every artifact of a finished experiment; returns the written paths."""
    if not report.folds:
        raise ReportError("Report has no folds to render")
    if len(report.class_names) != report.aggregate_confusion.n_classes:
        raise ReportError("Report class names do not match its confusion matrix")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "report.json"
    path.write_text(report.model_dump_json(indent=2, exclude={"timings"}))
    written.append(path)

    rows = [_metrics_row(f"fold{f.fold}", f.metrics) for f in report.folds]
    rows.append(_metrics_row("aggregate", report.aggregate))
    metrics = pd.DataFrame(rows)
    for name in ("majority", "knn", "logistic"):
        metrics[f"{name}_baseline"] = [getattr(f.baselines, name) for f in report.folds] \
            + [getattr(report.baselines, name)]
    path = out_dir / "metrics.csv"
    metrics.to_csv(path, index=False, float_format="%.1f")
    written.append(path)

    path = out_dir / f"confusion_{report.config.task_id}.csv"
    confusion_frame(report.aggregate_confusion, report.class_names).to_csv(path, index=False)
    written.append(path)

    seconds = report.timings.seconds_per_epoch if report.timings else []
    for fold in report.folds:
        h = fold.history
        n = len(h.total_loss)
        fold_seconds = seconds[fold.fold] if fold.fold < len(seconds) else [0.0] * n
        frame = pd.DataFrame({
            "epoch": range(1, n + 1), "total_loss": h.total_loss, "graph_loss": h.graph_loss,
            "conv_loss": h.conv_loss, "lstm_loss": h.lstm_loss, "train_acc": h.train_acc,
            "val_acc": h.val_acc, "seconds": fold_seconds[:n],
        }, columns=HISTORY_COLUMNS)
        path = out_dir / f"history_fold{fold.fold}.csv"
        frame.to_csv(path, index=False, float_format="%.6g")
        written.append(path)

    for layer, rows in (report.embeddings or {}).items():
        path = out_dir / f"embeddings_{layer}.csv"
        frame = pd.DataFrame(rows, columns=[f"d{i}" for i in range(len(rows[0]))] if rows else None)
        frame.to_csv(path, index=False, float_format="%.6g")
        written.append(path)

    if report.timings is not None:
        path = out_dir / "run_log.json"
        path.write_text(report.timings.model_dump_json(indent=2))
        written.append(path)

    logger.info("Wrote %d report artifacts to %s", len(written), out_dir)
    return written


def load_report(path) -> ExperimentReport:
    """Parse report.json (a file or its directory), restoring timings from run_log.json."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.is_file():
        raise FileNotFoundError(f"Report not found: {path}")
    try:
        report = ExperimentReport.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise ReportError(f"Malformed report {path}: {exc.error_count()} validation error(s)") from None
    log_path = path.parent / "run_log.json"
    if report.timings is None and log_path.is_file():
        try:
            report.timings = RunTimings.model_validate_json(log_path.read_text())
        except ValidationError:
            logger.warning("Ignoring malformed %s", log_path)
    return report


# ============= TEXT RENDERING =============

def format_confusion(cm: ConfusionMatrix, class_names: Sequence[str]) -> str:
    """Confusion matrix as an aligned grid, true classes down, predictions across."""
    header = ["true\\pred"] + list(class_names)
    body = [[name] + [str(c) for c in row] for name, row in zip(class_names, cm.counts)]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [header] + body]
    return "\n".join(lines)


def format_report_text(report: ExperimentReport) -> str:
    cfg = report.config
    lines = [
        "=" * 60,
        f"{cfg.variant.value.upper()}  {cfg.dataset_id} / {cfg.task_id}  (seed {cfg.seed})",
        "=" * 60,
        f"rows {report.n_rows}  windows {report.n_windows}  folds {len(report.folds)}",
        "",
        f"{'fold':>9}  {'acc':>6}  {'prec':>6}  {'rec':>6}  {'f1':>6}  {'best':>5}",
    ]
    for f in report.folds:
        m = f.metrics
        lines.append(f"{f.fold:>9}  {m.accuracy:6.1f}  {m.precision:6.1f}  {m.recall:6.1f}  {m.f1:6.1f}  "
                     f"{f.best_epoch:>5}")
    a = report.aggregate
    lines += [
        f"{'aggregate':>9}  {a.accuracy:6.1f}  {a.precision:6.1f}  {a.recall:6.1f}  {a.f1:6.1f}",
        "",
        f"Baselines: majority {report.baselines.majority:.1f}  knn {report.baselines.knn:.1f}  "
        f"logistic {report.baselines.logistic:.1f}",
        "",
        format_confusion(report.aggregate_confusion, report.class_names),
    ]
    return "\n".join(lines)


def write_ablation(rows: Sequence[AblationRow], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "ablation.csv"
    pd.DataFrame([r.model_dump() for r in rows], columns=["layers", "accuracy", "seconds_per_epoch"]) \
        .to_csv(path, index=False, float_format="%.6g")
    return path


def format_ablation_text(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'layers':>6}  {'accuracy':>8}  {'s/epoch':>10}"]
    lines += [f"{r.layers:>6}  {r.accuracy:8.1f}  {r.seconds_per_epoch:10.4f}" for r in rows]
    return "\n".join(lines)


def write_comparison(reports: Dict[str, ExperimentReport], out_dir) -> Path:
    """One row per variant of a sweep."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"variant": name, **_metrics_row("aggregate", r.aggregate)} for name, r in reports.items()]
    path = out_dir / "comparison.csv"
    pd.DataFrame(rows).drop(columns=["scope"]).to_csv(path, index=False, float_format="%.1f")
    return path

