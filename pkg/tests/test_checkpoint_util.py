import json

import numpy as np
import pytest

from errors import ReportError
from models import TrainConfig
from utils.checkpoint_util import load_checkpoint, read_checkpoint, save_checkpoint
from utils.hybrid_trainer import HybridModel, make_optimizer


@pytest.fixture
def config():
    return TrainConfig(dataset_id="Synthetic", task_id="label", window_size=10, graph_layers=2,
                       conv_layers=1, lstm_layers=1)


def _step(model, optimizer):
    for p in optimizer.all_params():
        p.grad = np.ones_like(p.data)
    optimizer.step()


def test_restores_parameters_buffers_and_moments(tmp_path, config):
    model = HybridModel(config, n_features=4, n_classes=2, seed=1)
    optimizer = make_optimizer(model, config)
    _step(model, optimizer)
    model.graph_layers[0].norm.running_mean = np.arange(4.0)
    save_checkpoint(tmp_path / "model", model, optimizer, meta={"fold": 0})

    fresh = HybridModel(config, n_features=4, n_classes=2, seed=99)
    fresh_opt = make_optimizer(fresh, config)
    manifest = load_checkpoint(tmp_path / "model", fresh, fresh_opt)

    assert manifest["meta"] == {"fold": 0}
    for (name, p), (_, q) in zip(model.named_parameters(), fresh.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data, err_msg=name)
    np.testing.assert_array_equal(fresh.graph_layers[0].norm.running_mean, np.arange(4.0))
    assert fresh_opt.states["graph"].t == 1
    for key, arr in optimizer.state_arrays().items():
        np.testing.assert_array_equal(fresh_opt.state_arrays()[key], arr)


def test_manifest_lists_every_array(tmp_path, config):
    model = HybridModel(config, n_features=4, n_classes=2, seed=1)
    save_checkpoint(tmp_path / "model", model)
    manifest, arrays = read_checkpoint(tmp_path / "model")
    assert manifest["parameter_count"] == model.parameter_count()
    assert manifest["optimizer"] is None
    assert {e["name"] for e in manifest["entries"]} == set(model.state_dict())
    total = sum(e["size"] for e in manifest["entries"])
    assert (tmp_path / "model.bin").stat().st_size == 8 * total
    assert set(arrays) == set(model.state_dict())


def test_corrupt_blob_is_rejected(tmp_path, config):
    model = HybridModel(config, n_features=4, n_classes=2, seed=1)
    save_checkpoint(tmp_path / "model", model)
    blob = bytearray((tmp_path / "model.bin").read_bytes())
    blob[0] ^= 0xFF
    (tmp_path / "model.bin").write_bytes(bytes(blob))
    with pytest.raises(ReportError, match="checksum"):
        read_checkpoint(tmp_path / "model")


def test_malformed_manifest_is_rejected(tmp_path, config):
    save_checkpoint(tmp_path / "model", HybridModel(config, n_features=4, n_classes=2, seed=1))
    (tmp_path / "model.json").write_text("{not json")
    with pytest.raises(ReportError):
        read_checkpoint(tmp_path / "model")


def test_manifest_is_sorted_json(tmp_path, config):
    save_checkpoint(tmp_path / "model", HybridModel(config, n_features=4, n_classes=2, seed=1))
    text = (tmp_path / "model.json").read_text()
    assert json.loads(text)["format_version"] == 1
