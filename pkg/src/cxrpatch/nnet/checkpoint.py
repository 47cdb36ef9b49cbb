"""Self-describing model checkpoints.

A checkpoint is one JSON document carrying a version field, architecture
dims, the training config, pipeline settings needed to reproduce inference
(patch size, normalization, grid), and every parameter in declared order as
base64 little-endian float64 bytes. Serialization is canonical (sorted keys),
so identical nets produce byte-identical files.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import TinyResNet
from .training import TrainConfig

CHECKPOINT_VERSION = 1


def save_checkpoint(
    net: TinyResNet,
    cfg: TrainConfig,
    path: str | Path,
    pipeline: dict | None = None,
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "in_channels": net.in_channels,
            "base_channels": net.base_channels,
            "num_classes": net.num_classes,
        },
        "train_config": cfg.to_json(),
        "pipeline": pipeline or {},
        "params": [
            {
                "name": name,
                "shape": list(value.shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(value, dtype="<f8").tobytes()
                ).decode("ascii"),
            }
            for name, value in net.param_items()
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[TinyResNet, TrainConfig, dict]:
    """Returns (net, train_config, pipeline settings)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r} in {path}"
        )
    try:
        arch = doc["arch"]
        net = TinyResNet(
            in_channels=arch["in_channels"],
            base_channels=arch["base_channels"],
            num_classes=arch["num_classes"],
        )
        expected = [name for name, _ in net.param_items()]
        stored = [p["name"] for p in doc["params"]]
        if stored != expected:
            raise CheckpointError(
                f"parameter order mismatch: expected {expected}, found {stored}"
            )
        for p in doc["params"]:
            raw = np.frombuffer(base64.b64decode(p["data"]), dtype="<f8")
            net.set_param(p["name"], raw.reshape(p["shape"]).astype(np.float64))
        cfg = TrainConfig.from_json(doc["train_config"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return net, cfg, doc.get("pipeline", {})
