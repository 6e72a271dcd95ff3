"""
Checkpoint format (JSON, version 1):

    {
      "format": "asmr-checkpoint", "version": 1,
      "stage": "init" | "pretrain" | "train", "seed": int, "epoch": int,
      "architecture": {"image": {...}, "category": {...}, "heads": {group: {...}}},
      "blocks": {name: {"shape": [...], "data": [flat row-major floats]}},
      "optimizer": null | {"epoch": int, "velocities": {name: {"shape", "data"}}}
    }

Network entries in "architecture" hold "dims", "relu_after" and "normalize".
Floats use Python's shortest round-trip repr, so loading is exact and identical
states serialise to identical bytes.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from src.core.optimizer import OptimizerState, TrainConfig, lr_schedule
from src.domain.model_state import HammingWeights, ModelState
from src.domain.network import DenseLayer, EncoderNet, Mlp
from src.errors import DataError
from src.infrastructure.event_bus import Event, EventBus, EventType

logger = logging.getLogger("Checkpoint")

FORMAT = "asmr-checkpoint"
VERSION = 1


@dataclass
class CheckpointInfo:
    stage: str
    epoch: int
    seed: int
    optimizer: Optional[OptimizerState]


def _block(array: np.ndarray) -> dict:
    return {"shape": list(array.shape), "data": [float(v) for v in array.reshape(-1)]}


def _array(entry: dict, name: str) -> np.ndarray:
    try:
        return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"Checkpoint block '{name}' is malformed: {e}")


def _net_spec(net: Mlp) -> dict:
    return {"dims": net.dims, "relu_after": net.relu_after, "normalize": net.normalize}


def _build_net(spec: dict, blocks: Dict[str, np.ndarray], prefix: str, cls=Mlp) -> Mlp:
    layers = []
    for i in range(len(spec["dims"]) - 1):
        try:
            layers.append(DenseLayer(blocks[f"{prefix}{i}.weight"], blocks[f"{prefix}{i}.bias"]))
        except KeyError as e:
            raise DataError(f"Checkpoint lacks parameter block {e}")
    net = cls(layers, relu_after=spec["relu_after"], normalize=spec["normalize"])
    if net.dims != list(spec["dims"]):
        raise DataError(f"Checkpoint blocks for '{prefix}' do not match declared dims {spec['dims']}")
    return net


def to_document(state: ModelState, stage: str, epoch: int, optimizer: Optional[OptimizerState] = None) -> dict:
    heads = state.pretrain_heads or {}
    return {
        "format": FORMAT,
        "version": VERSION,
        "stage": stage,
        "seed": int(state.seed),
        "epoch": int(epoch),
        "architecture": {
            "image": _net_spec(state.image_encoder),
            "category": _net_spec(state.category_encoder),
            "heads": {name: _net_spec(head) for name, head in heads.items()},
        },
        "blocks": {name: _block(value) for name, value in state.parameters().items()},
        "optimizer": None if optimizer is None else {
            "epoch": int(optimizer.epoch),
            "velocities": {name: _block(v) for name, v in optimizer.velocities.items()},
        },
    }


def save_checkpoint(path: str, state: ModelState, stage: str, epoch: int,
                    optimizer: Optional[OptimizerState] = None) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_document(state, stage, epoch, optimizer), f, separators=(",", ":"))
    logger.info(f"Saved {stage} checkpoint (epoch {epoch}) to {path}")
    return path


def load_checkpoint(path: str, train_cfg: Optional[TrainConfig] = None):
    """Returns (ModelState, CheckpointInfo). Optimizer learning rates follow train_cfg when given."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"Checkpoint {path} is not valid JSON (line {e.lineno}): {e.msg}")
    if document.get("format") != FORMAT or document.get("version") != VERSION:
        raise DataError(f"{path} is not a version-{VERSION} checkpoint")

    blocks = {name: _array(entry, name) for name, entry in document["blocks"].items()}
    arch = document["architecture"]
    image = _build_net(arch["image"], blocks, "image.", EncoderNet)
    category = _build_net(arch["category"], blocks, "category.", EncoderNet)
    heads = {name: _build_net(spec, blocks, f"heads.{name}.") for name, spec in arch.get("heads", {}).items()}
    if "hamming.w" not in blocks:
        raise DataError("Checkpoint lacks the Hamming weights")
    state = ModelState(image, category, HammingWeights(blocks["hamming.w"]), heads or None, int(document["seed"]))

    optimizer = None
    if document.get("optimizer"):
        entry = document["optimizer"]
        velocities = {name: _array(v, name) for name, v in entry["velocities"].items()}
        epoch = int(entry["epoch"])
        rates = lr_schedule(epoch, train_cfg) if train_cfg is not None else lr_schedule(epoch, TrainConfig())
        optimizer = OptimizerState(velocities, epoch, rates)
    info = CheckpointInfo(document["stage"], int(document["epoch"]), int(document["seed"]), optimizer)
    return state, info


class CheckpointWriter:
    """Writes a checkpoint every `every` epochs when EPOCH_COMPLETED fires."""

    def __init__(self, bus: EventBus, directory: str, every: int, prefix: str = "train"):
        self.bus = bus
        self.directory = directory
        self.every = every
        self.prefix = prefix
        self.written = []
        self.bus.subscribe(EventType.EPOCH_COMPLETED, self.on_epoch_completed)

    def on_epoch_completed(self, event: Event):
        data = event.data
        if self.every <= 0 or data.get("stage") != self.prefix:
            return
        epoch = data["epoch"]
        if (epoch + 1) % self.every:
            return
        path = os.path.join(self.directory, f"{self.prefix}_epoch{epoch + 1:03d}.json")
        save_checkpoint(path, data["state"], data["stage"], epoch + 1, data.get("optimizer"))
        self.written.append(path)
        self.bus.publish(Event(EventType.CHECKPOINT_SAVED, {"path": path, "epoch": epoch + 1}))
