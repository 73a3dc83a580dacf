"""Checkpoint directory format.

``weights.bin`` holds the concatenated little-endian float32 parameter buffers
in declaration order; ``weights.json`` lists {name, shape, byte offset, byte
length} per tensor plus the full model config, the variant tag, and a format
version integer.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import ModelConfig
from .errors import ConfigError
from .network import GazeVideoNet

CHECKPOINT_VERSION = 1


def save_checkpoint(model: GazeVideoNet, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(p.shape),
                "byte_offset": offset,
                "byte_length": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "variant": model.variant.tag,
        "tensors": entries,
    }
    with open(os.path.join(directory, "weights.bin"), "wb") as f:
        f.write(b"".join(blobs))
    with open(os.path.join(directory, "weights.json"), "w") as f:
        json.dump(meta, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(directory: str, expected_cfg: ModelConfig | None = None) -> GazeVideoNet:
    """Rebuild the model from a checkpoint directory, validating stage by stage."""
    meta_path = os.path.join(directory, "weights.json")
    bin_path = os.path.join(directory, "weights.bin")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"missing checkpoint metadata: {meta_path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"checkpoint metadata is not valid JSON: {e}") from e
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint format {meta.get('format_version')!r}, expected {CHECKPOINT_VERSION}"
        )
    cfg = ModelConfig.from_dict(meta["model_config"])
    if expected_cfg is not None and expected_cfg.to_dict() != cfg.to_dict():
        for key, val in expected_cfg.to_dict().items():
            if cfg.to_dict().get(key) != val:
                raise ConfigError(
                    f"checkpoint/config mismatch at {key!r}: checkpoint has "
                    f"{cfg.to_dict().get(key)!r}, run config has {val!r}"
                )
    model = GazeVideoNet(cfg, meta["variant"])
    try:
        blob = open(bin_path, "rb").read()
    except FileNotFoundError as e:
        raise ConfigError(f"missing checkpoint weights: {bin_path}") from e
    params = list(model.named_parameters())
    tensors = meta["tensors"]
    if len(params) != len(tensors):
        raise ConfigError(
            f"checkpoint has {len(tensors)} tensors, model declares {len(params)}"
        )
    for (name, p), entry in zip(params, tensors):
        if entry["name"] != name:
            raise ConfigError(f"checkpoint/config mismatch at tensor {entry['name']!r} != {name!r}")
        if tuple(entry["shape"]) != p.shape:
            raise ConfigError(
                f"checkpoint/config mismatch at {name!r}: shape {entry['shape']} != {list(p.shape)}"
            )
        start, length = entry["byte_offset"], entry["byte_length"]
        if length != 4 * p.size or start + length > len(blob):
            raise ConfigError(f"checkpoint buffer for {name!r} out of bounds")
        arr = np.frombuffer(blob, dtype="<f4", count=p.size, offset=start).reshape(p.shape)
        p.data = arr.astype(np.float32 if cfg.dtype == "float32" else np.float64)
    return model
