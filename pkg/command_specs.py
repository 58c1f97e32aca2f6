"""
Command definitions for the sagechain CLI.
Each entry declares a command, its description and its flags; main.py builds
the argparse parser from this table and command_executor.py dispatches on
the command name.
"""

# Flags shared by train and ablate. "field" is the CliConfig field a flag sets.
_RUN_FLAGS = {
    "dataset": {
        "type_": "STRING",
        "field": "dataset_id",
        "description": "Dataset id: DataCo, Shipping or SmartLogistics (aliases like smart-logistics accepted)"
    },
    "task": {
        "type_": "STRING",
        "field": "task_id",
        "description": "Task id within the dataset schema, e.g. traffic_status"
    },
    "path": {
        "type_": "STRING",
        "field": "data_path",
        "description": "CSV file, or the <dataset>_encoded.json sidecar written by ingest. "
                       "Default: $SAGECHAIN_DATA_DIR/<schema default filename>"
    },
    "variant": {
        "type_": "STRING",
        "field": "variant",
        "choices": ["h-gsn", "h-gatn", "gsn", "gatn", "all"],
        "description": "Model variant; 'all' runs the four-variant sweep. Default: h-gsn"
    },
    "epochs": {"type_": "INTEGER", "field": "epochs", "description": "Maximum epochs per fold. Default: 400"},
    "window": {"type_": "INTEGER", "field": "window_size", "description": "Rows per graph window. Default: 20"},
    "threshold": {
        "type_": "NUMBER",
        "field": "threshold",
        "description": "Edge threshold on |leaky_relu(correlation)|, in [0, 1). Default: 0.5"
    },
    "leak-alpha": {"type_": "NUMBER", "field": "leak_alpha", "description": "Leak slope for negative correlations. Default: 0.1"},
    "k-folds": {"type_": "INTEGER", "field": "k_folds", "description": "Cross-validation folds. Default: 10"},
    "seed": {"type_": "INTEGER", "field": "seed", "description": "Seed for balancing, folds, init and shuffling. Default: 17"},
    "out": {"type_": "STRING", "field": "out", "description": "Output directory. Default: runs"},
    "parallel-folds": {"type_": "INTEGER", "field": "parallel_folds", "description": "Folds trained concurrently. Default: 1"},
    "config": {"type_": "STRING", "field": None, "description": "Flat KEY=VALUE run config; flags override it"},
    "schemas": {"type_": "STRING", "field": "schemas", "description": "Alternative schema JSON file"},
    "lr-graph": {"type_": "NUMBER", "field": "lr_graph", "description": "Adam learning rate of the graph stack. Default: 0.001"},
    "lr-seq": {"type_": "NUMBER", "field": "lr_seq", "description": "Adam learning rate of the conv/LSTM branches. Default: 0.0001"},
    "weight-decay": {"type_": "NUMBER", "field": "weight_decay", "description": "L2 weight decay. Default: 0.0004"},
    "loss-weights": {"type_": "STRING", "field": "loss_weights", "description": "Head weights 'graph,conv,lstm'. Default: 1,1,1"},
    "aggregator": {
        "type_": "STRING",
        "field": "aggregator",
        "choices": ["mean", "pool", "lstm"],
        "description": "GraphSAGE aggregator. Default: mean"
    },
    "normalization": {
        "type_": "STRING",
        "field": "normalization",
        "choices": ["batchnorm", "l2"],
        "description": "Per-layer normalization. Default: batchnorm"
    },
    "combiner": {
        "type_": "STRING",
        "field": "combiner",
        "choices": ["mean", "graph"],
        "description": "Inference rule of hybrid variants: mean of head log-probabilities or graph head only"
    },
    "heads": {"type_": "INTEGER", "field": "heads", "description": "Attention heads of GAT layers. Default: 1"},
    "gat-leak": {
        "type_": "NUMBER",
        "field": "gat_leak",
        "description": "Negative slope of the leaky_relu on attention logits. Default: 0.2"
    },
    "graph-layers": {"type_": "INTEGER", "field": "graph_layers", "description": "Graph stack depth. Default: 4"},
    "dropout": {"type_": "NUMBER", "field": "dropout", "description": "Dropout after the graph stack. Default: 0"},
    "convolutional-variant": {
        "type_": "BOOLEAN",
        "field": "convolutional_variant",
        "description": "Use W*mean(self, neighbors) instead of W*[self || neighbors]"
    },
    "export-embeddings": {
        "type_": "BOOLEAN",
        "field": "export_embeddings",
        "description": "Write per-layer node embeddings of fold 0's test windows"
    },
    "dump-graphs": {
        "type_": "BOOLEAN",
        "field": "dump_graphs",
        "description": "Write every window graph as CSV under fold_<i>/graphs of the run directory"
    },
}

COMMAND_SPECS = [
    {
        "name": "ingest",
        "description": "Load a dataset, print row counts, class distributions and encoding maps, and write the encoded cache.",
        "parameters": {
            "type_": "OBJECT",
            "properties": {
                "dataset": _RUN_FLAGS["dataset"],
                "path": {
                    "type_": "STRING",
                    "field": "data_path",
                    "description": "CSV file. Default: $SAGECHAIN_DATA_DIR/<schema default filename>"
                },
                "schemas": _RUN_FLAGS["schemas"],
                "out": {"type_": "STRING", "field": "out", "description": "Cache directory. Default: runs/cache"},
            },
            "required": ["dataset"]
        }
    },
    {
        "name": "train",
        "description": "Run k-fold training and evaluation and write checkpoints, histories and the report.",
        "parameters": {
            "type_": "OBJECT",
            "properties": dict(_RUN_FLAGS),
            "required": []
        }
    },
    {
        "name": "ablate",
        "description": "Repeat the experiment for several graph depths and tabulate accuracy and seconds per epoch.",
        "parameters": {
            "type_": "OBJECT",
            "properties": {
                **{k: v for k, v in _RUN_FLAGS.items() if k != "graph-layers"},
                "layers": {
                    "type_": "STRING",
                    "field": "layers",
                    "description": "Comma-separated graph depths. Default: 2,3,4,5"
                },
            },
            "required": []
        }
    },
    {
        "name": "report",
        "description": "Print per-fold and aggregate metrics and the confusion grid of an existing report.",
        "parameters": {
            "type_": "OBJECT",
            "properties": {
                "path": {"type_": "STRING", "field": None, "description": "report.json or the run directory holding it"},
            },
            "required": ["path"]
        }
    },
]


def get_command_specs():
    """Returns every command declaration."""
    return COMMAND_SPECS


def get_command_by_name(command_name: str):
    """
    Retrieve a specific command declaration by name.

    Args:
        command_name: Name of the command to retrieve

    Returns:
        Command declaration dict or None if not found
    """
    for command in COMMAND_SPECS:
        if command["name"] == command_name:
            return command
    return None


def flag_fields():
    """Flag name -> CliConfig field across all commands, for config-file key aliases."""
    fields = {}
    for command in COMMAND_SPECS:
        for flag, prop in command["parameters"]["properties"].items():
            if prop.get("field"):
                fields[flag.replace("-", "_")] = prop["field"]
    return fields
