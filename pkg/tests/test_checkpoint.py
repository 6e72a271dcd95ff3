import json

import numpy as np
import pytest

from src.core.optimizer import OptimizerState, TrainConfig
from src.errors import DataError
from src.infrastructure.checkpoint import CheckpointWriter, load_checkpoint, save_checkpoint
from src.infrastructure.event_bus import Event, EventBus, EventType


def test_round_trip_is_exact(tmp_path, small_state, small_dataset):
    state = small_state.with_heads(small_dataset.schema, (8,))
    state.hamming_weights.w[:] = np.random.default_rng(0).uniform(0, 1, state.hamming_weights.w.shape)
    opt = OptimizerState.initialize(state, TrainConfig())
    opt.velocities["hamming.w"] += 0.123456789
    opt.epoch = 3
    path = save_checkpoint(str(tmp_path / "ck.json"), state, "train", 3, opt)

    loaded, info = load_checkpoint(path, TrainConfig())
    assert (info.stage, info.epoch, info.seed) == ("train", 3, 5)
    assert list(loaded.parameters()) == list(state.parameters())
    for name, value in state.parameters().items():
        assert np.array_equal(loaded.parameters()[name], value)
    assert info.optimizer.epoch == 3
    assert np.array_equal(info.optimizer.velocities["hamming.w"], opt.velocities["hamming.w"])
    assert loaded.image_encoder.normalize and not loaded.pretrain_heads["g0"].normalize


def test_identical_states_give_identical_bytes(tmp_path, small_state):
    a = save_checkpoint(str(tmp_path / "a.json"), small_state, "init", 0)
    b = save_checkpoint(str(tmp_path / "b.json"), small_state.copy(), "init", 0)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_rejects_foreign_documents(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(DataError, match="checkpoint"):
        load_checkpoint(str(path))
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(str(tmp_path / "missing.json"))


def test_missing_block_is_reported(tmp_path, small_state):
    path = save_checkpoint(str(tmp_path / "ck.json"), small_state, "init", 0)
    document = json.loads(open(path).read())
    del document["blocks"]["category.1.weight"]
    open(path, "w").write(json.dumps(document))
    with pytest.raises(DataError, match="category.1.weight"):
        load_checkpoint(path)


def test_writer_saves_every_n_epochs(tmp_path, small_state):
    bus = EventBus(raise_errors=True)
    saved = []
    bus.subscribe(EventType.CHECKPOINT_SAVED, lambda event: saved.append(event.data["epoch"]))
    writer = CheckpointWriter(bus, str(tmp_path), every=2, prefix="train")
    for epoch in range(5):
        bus.publish(Event(EventType.EPOCH_COMPLETED, {"stage": "train", "epoch": epoch, "state": small_state}))
    bus.publish(Event(EventType.EPOCH_COMPLETED, {"stage": "pretrain", "epoch": 1, "state": small_state}))
    assert saved == [2, 4]
    assert [p.rsplit("/", 1)[-1] for p in writer.written] == ["train_epoch002.json", "train_epoch004.json"]
