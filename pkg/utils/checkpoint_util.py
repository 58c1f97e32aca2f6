"""
Checkpoint format: one flat little-endian float64 blob (`<name>.bin`) plus a
JSON manifest (`<name>.json`) listing every array's name, shape, offset and
kind, and the optimizer step counters.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from errors import DimensionError, ReportError
from utils.optimizer import Adam
from utils.tensor_engine import Module

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _pack(arrays: Dict[str, Tuple[str, np.ndarray]]):
    entries = []
    chunks = []
    offset = 0
    for name in arrays:
        kind, arr = arrays[name]
        flat = np.ascontiguousarray(arr, dtype=_DTYPE).reshape(-1)
        entries.append({"name": name, "kind": kind, "shape": list(np.shape(arr)),
                        "offset": offset, "size": int(flat.size)})
        chunks.append(flat)
        offset += int(flat.size)
    blob = np.concatenate(chunks).astype(_DTYPE).tobytes() if chunks else b""
    return entries, blob


def save_checkpoint(path, model: Module, optimizer: Optional[Adam] = None,
                    meta: Optional[Dict] = None) -> Path:
    """Write `<path>.bin` and `<path>.json`; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, Tuple[str, np.ndarray]] = {}
    for name, p in model.named_parameters():
        arrays[name] = ("param", p.data)
    for name, buf in model.named_buffers():
        arrays[name] = ("buffer", np.asarray(buf))
    if optimizer is not None:
        for key, arr in optimizer.state_arrays().items():
            group, moment, name = key.split("/", 2)
            arrays[key] = (f"adam_{moment}", arr)
    entries, blob = _pack(arrays)
    bin_path = path.with_suffix(".bin")
    bin_path.write_bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64-le",
        "blob": bin_path.name,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "entries": entries,
        "optimizer": optimizer.state_meta() if optimizer is not None else None,
        "parameter_count": model.parameter_count(),
        "meta": meta or {},
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.debug("Saved checkpoint %s (%d arrays)", json_path, len(entries))
    return json_path


def read_checkpoint(path) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """Return (manifest, arrays by name) without touching any model."""
    json_path = Path(path).with_suffix(".json")
    try:
        manifest = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"Malformed checkpoint manifest {json_path}: {exc}") from None
    blob = (json_path.parent / manifest["blob"]).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ReportError(f"Checkpoint blob {manifest['blob']} does not match its checksum")
    flat = np.frombuffer(blob, dtype=_DTYPE)
    arrays = {}
    for entry in manifest["entries"]:
        start = entry["offset"]
        chunk = flat[start:start + entry["size"]]
        arrays[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return manifest, arrays


def load_checkpoint(path, model: Module, optimizer: Optional[Adam] = None) -> Dict:
    """Restore parameters, buffers and (optionally) Adam moments; returns the manifest."""
    manifest, arrays = read_checkpoint(path)
    kinds = {e["name"]: e["kind"] for e in manifest["entries"]}
    model.load_state_dict({k: v for k, v in arrays.items() if kinds[k] in ("param", "buffer")})
    if optimizer is not None:
        if manifest.get("optimizer") is None:
            raise DimensionError(f"Checkpoint {path} carries no optimizer state")
        for group_name, state in optimizer.states.items():
            saved = manifest["optimizer"].get(group_name)
            if saved is None:
                raise DimensionError(f"Checkpoint {path} has no optimizer group '{group_name}'")
            state.t = int(saved["t"])
            state.lr = float(saved["lr"])
            for name in state.m:
                state.m[name] = arrays[f"{group_name}/m/{name}"].copy()
                state.v[name] = arrays[f"{group_name}/v/{name}"].copy()
    return manifest
