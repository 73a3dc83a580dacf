"""Checkpoint round-trips and mismatch detection."""

import json

import numpy as np
import pytest

from glcgaze.checkpoint import load_checkpoint, save_checkpoint
from glcgaze.config import tiny_config
from glcgaze.errors import ConfigError
from glcgaze.network import build_model
from glcgaze.tensor import Tensor, no_grad


def test_roundtrip_preserves_weights_and_outputs(tmp_path):
    cfg = tiny_config()
    model = build_model(cfg, "mvit+global+glc", seed=5, all_random=True)
    save_checkpoint(model, tmp_path / "ck")
    back = load_checkpoint(str(tmp_path / "ck"))
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2
        assert p1.data.tobytes() == p2.data.tobytes()
    clip = Tensor(np.random.default_rng(0).random((3, 4, 8, 8)).astype(np.float32))
    with no_grad():
        np.testing.assert_array_equal(model.forward_gaze(clip).data, back.forward_gaze(clip).data)


def test_weights_bin_layout(tmp_path):
    cfg = tiny_config()
    model = build_model(cfg, "mvit", seed=1)
    save_checkpoint(model, tmp_path)
    meta = json.loads((tmp_path / "weights.json").read_text())
    blob = (tmp_path / "weights.bin").read_bytes()
    assert meta["format_version"] == 1
    assert meta["variant"] == "mvit"
    total = sum(t["byte_length"] for t in meta["tensors"])
    assert total == len(blob)
    offsets = [t["byte_offset"] for t in meta["tensors"]]
    assert offsets == sorted(offsets)
    first = meta["tensors"][0]
    arr = np.frombuffer(blob, dtype="<f4", count=int(np.prod(first["shape"])))
    name_to_param = dict(model.named_parameters())
    np.testing.assert_array_equal(arr.reshape(first["shape"]), name_to_param[first["name"]].data)


def test_expected_config_mismatch_names_field(tmp_path):
    model = build_model(tiny_config(), "mvit", seed=0)
    save_checkpoint(model, tmp_path)
    with pytest.raises(ConfigError, match="head_dim"):
        load_checkpoint(str(tmp_path), expected_cfg=tiny_config(head_dim=4))


def test_tampered_shape_rejected(tmp_path):
    model = build_model(tiny_config(), "mvit", seed=0)
    save_checkpoint(model, tmp_path)
    meta = json.loads((tmp_path / "weights.json").read_text())
    meta["tensors"][3]["shape"] = [1, 2, 3]
    (tmp_path / "weights.json").write_text(json.dumps(meta))
    name = meta["tensors"][3]["name"]
    with pytest.raises(ConfigError, match=name.replace(".", r"\.")):
        load_checkpoint(str(tmp_path))


def test_missing_files_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(str(tmp_path / "nope"))
