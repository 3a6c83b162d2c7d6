"""Text checkpoints that round-trip every tensor bit-exactly.

A checkpoint is one JSON document::

    {"format": "irregad-checkpoint/1",
     "hyperparameters": {...}, "epoch": 12, "rng_state": {...},
     "model": {"encoder": {...config, "weights": {name: {"shape": [...], "data": [...]}}},
               "decoder": {...}, "head": {...}, "pooling": ..., "recon_mode": ..., "alpha": ...}}

Floats are written with their shortest round-trip representation, so
``load(save(x)) == x`` bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .decoder import DecoderParams
from .recurrent_encoder import EncoderParams
from .model import AnomalyModel
from .one_class import ClassifierParams
from .trainer import Hyperparameters

__all__ = ["FORMAT", "Checkpoint", "CheckpointError", "dumps", "load_checkpoint", "loads",
           "model_from_dict", "model_to_dict", "save_checkpoint"]

FORMAT = "irregad-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: AnomalyModel
    hp: Hyperparameters | None = None
    epoch: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _tensor(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _array(obj: Mapping, name: str) -> np.ndarray:
    try:
        shape = tuple(int(d) for d in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"tensor {name}: {exc}") from None
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"tensor {name}: {data.size} values for shape {list(shape)}")
    return data.reshape(shape)


def _weights(block: Mapping, where: str) -> dict[str, np.ndarray]:
    return {k: _array(v, f"{where}.{k}") for k, v in block.get("weights", {}).items()}


def model_to_dict(model: AnomalyModel) -> dict:
    return {
        "encoder": {**model.encoder.config(),
                    "weights": {k: _tensor(v) for k, v in sorted(model.encoder.weights.items())}},
        "decoder": {"depth": model.decoder.depth,
                    "weights": {k: _tensor(v) for k, v in sorted(model.decoder.weights.items())}},
        "head": {**model.head.config(),
                 "weights": {k: _tensor(v) for k, v in sorted(model.head.weights.items())}},
        "pooling": model.pooling,
        "recon_mode": model.recon_mode,
        "alpha": model.alpha,
    }


def model_from_dict(obj: Mapping) -> AnomalyModel:
    try:
        enc_cfg = {k: v for k, v in obj["encoder"].items() if k != "weights"}
        head_cfg = {k: v for k, v in obj["head"].items() if k != "weights"}
        enc = EncoderParams(weights=_weights(obj["encoder"], "encoder"), **enc_cfg)
        dec = DecoderParams(int(obj["decoder"]["depth"]), _weights(obj["decoder"], "decoder"))
        head = ClassifierParams(weights=_weights(obj["head"], "head"), **head_cfg)
        return AnomalyModel(enc, dec, head, obj["pooling"], obj["recon_mode"], float(obj["alpha"]))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed model block: {exc}") from None


def dumps(ckpt: Checkpoint) -> str:
    doc = {
        "format": FORMAT,
        "hyperparameters": None if ckpt.hp is None else ckpt.hp.to_dict(),
        "epoch": int(ckpt.epoch),
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
        "model": model_to_dict(ckpt.model),
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format') if isinstance(doc, dict) else None!r}")
    hp = doc.get("hyperparameters")
    return Checkpoint(model_from_dict(doc["model"]),
                      None if hp is None else Hyperparameters.from_dict(hp),
                      int(doc.get("epoch", 0)), doc.get("rng_state"), doc.get("extra") or {})


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> Path:
    p = Path(path)
    p.write_text(dumps(ckpt))
    return p


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text)
