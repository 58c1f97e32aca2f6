"""
Command executor for the sagechain CLI.
Dispatches a command name and its parameters to the pipeline functions and
returns a result dict for main.py to print.
"""
import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from command_specs import flag_fields
from errors import ConfigError, TrainingAborted
from models import CliConfig, ExperimentReport, Variant
from utils.dataset_util import (
    encode_categoricals, get_schema, load_dataset, prepare_dataset, resolve_data_path, summarize_table, write_cache,
)
from utils.evaluation import layer_ablation
from utils.hybrid_trainer import run_experiment
from utils.report_util import (
    format_ablation_text, format_report_text, load_report, render_report, write_ablation, write_comparison,
)

logger = logging.getLogger(__name__)

SWEEP = "all"


def build_config(params: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> CliConfig:
    """
    Merge a KEY=VALUE config file (params["config"]) with explicit flags.

    File keys may be CliConfig field names or flag names (case-insensitive,
    '-' or '_'). Flags that are None were not given and do not override.
    """
    merged: Dict[str, Any] = dict(defaults or {})
    aliases = flag_fields()
    config_path = params.get("config")
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        for key, value in dotenv_values(path).items():
            name = key.strip().lower().replace("-", "_")
            name = aliases.get(name, name)
            if name not in CliConfig.model_fields:
                raise ConfigError(f"Unknown config key '{key}' in {path}")
            if value is None or value == "":
                raise ConfigError(f"Config key '{key}' in {path} has no value")
            merged[name] = value
    merged.update({k: v for k, v in params.items() if k != "config" and v is not None})
    try:
        return CliConfig(**merged)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"Invalid value for '{where}': {first['msg']}") from None


class CommandExecutor:
    """Executes CLI commands by calling the underlying pipeline functions."""

    def execute(self, command_name: str, parameters: Dict[str, Any]) -> Dict[str, Any]:
        """
        Execute a command.

        Args:
            command_name: Name of the command to execute
            parameters: Flag values keyed by CliConfig field, plus "config" or "path"

        Returns:
            Result dict with "success" and the printable "text"

        sagechain errors propagate so the caller can map them to exit codes.
        """
        if command_name == "ingest":
            return self._ingest(parameters)
        elif command_name == "train":
            return self._train(parameters)
        elif command_name == "ablate":
            return self._ablate(parameters)
        elif command_name == "report":
            return self._report(parameters)
        else:
            return {
                "error": f"Unknown command: {command_name}",
                "success": False
            }

    def _ingest(self, params: Dict) -> Dict:
        schemas_path = params.get("schemas")
        schema = get_schema(params["dataset_id"], schemas_path)
        path = resolve_data_path(schema, params.get("data_path"))
        table = encode_categoricals(load_dataset(path, schema.dataset_id, schemas_path))
        summary = summarize_table(table)
        out_dir = Path(params.get("out") or Path("runs") / "cache")
        cache_path, checksum = write_cache(table, summary.pop("labels"), out_dir)

        lines = [
            f"{summary['dataset_id']}: {summary['row_count']} rows ({summary['rejected_rows']} rejected)",
            "",
        ]
        for task, counts in summary["class_distribution"].items():
            lines.append(f"{task}: " + ", ".join(f"{name}={n}" for name, n in counts.items()))
        lines.append("")
        for column, levels in summary["encoding_maps"].items():
            lines.append(f"{column}: " + ", ".join(f"{level}->{code}" for level, code in levels.items()))
        lines += ["", f"Cache: {cache_path} (sha256 {checksum[:12]})"]
        return {"success": True, "summary": summary, "cache": str(cache_path), "text": "\n".join(lines)}

    def _train(self, params: Dict) -> Dict:
        sweep = params.get("variant") == SWEEP
        cli = build_config({**params, "variant": None} if sweep else params,
                           defaults={"variant": Variant.H_GSN.value} if sweep else None)
        base = cli.train_config()
        out_dir = Path(cli.out)
        variants = list(Variant) if sweep else [base.variant]
        prepared = prepare_dataset(base, cli.schemas)
        base = base.model_copy(update={"dataset_id": prepared.dataset_id})

        reports: Dict[str, ExperimentReport] = {}
        texts = []
        for variant in variants:
            config = base.model_copy(update={"variant": variant})
            run_dir = out_dir / f"{config.dataset_id}-{config.task_id}-{variant.value}"
            try:
                report = run_experiment(config, prepared=prepared, out_dir=str(run_dir),
                                        parallel_folds=cli.parallel_folds)
            except TrainingAborted as exc:
                self._quarantine(run_dir, out_dir, exc)
                raise
            render_report(report, run_dir)
            reports[variant.value] = report
            texts.append(format_report_text(report))

        result = {"success": True, "reports": {k: str(out_dir / f"{r.config.dataset_id}-{r.config.task_id}-{k}")
                                                for k, r in reports.items()}}
        if sweep:
            result["comparison"] = str(write_comparison(reports, out_dir))
            texts.append("\n".join(f"{name:>7}  {r.aggregate.accuracy:6.1f}" for name, r in reports.items()))
        result["text"] = "\n\n".join(texts)
        return result

    def _ablate(self, params: Dict) -> Dict:
        cli = build_config(params)
        base = cli.train_config()
        prepared = prepare_dataset(base, cli.schemas)
        base = base.model_copy(update={"dataset_id": prepared.dataset_id})
        rows = layer_ablation(base, cli.layers, prepared=prepared, parallel_folds=cli.parallel_folds)
        path = write_ablation(rows, Path(cli.out))
        return {"success": True, "ablation": str(path), "text": format_ablation_text(rows)}

    def _report(self, params: Dict) -> Dict:
        report = load_report(params["path"])
        return {"success": True, "text": format_report_text(report)}

    @staticmethod
    def _quarantine(run_dir: Path, out_dir: Path, exc: TrainingAborted):
        """Move a failed run's partial output under out/failed/ with a diagnostics dump."""
        failed = out_dir / "failed" / run_dir.name
        if failed.exists():
            shutil.rmtree(failed)
        failed.parent.mkdir(parents=True, exist_ok=True)
        if run_dir.exists():
            shutil.move(str(run_dir), str(failed))
        failed.mkdir(parents=True, exist_ok=True)
        dump = {"message": str(exc), "fold": exc.fold, "epoch": exc.epoch, "diagnostics": exc.diagnostics}
        (failed / "diagnostics.json").write_text(json.dumps(dump, indent=2, default=str))
        logger.error("Training aborted; partial output moved to %s", failed)
