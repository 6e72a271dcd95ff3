import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.objective import Batch, LossConfig, classification_objective, total_loss
from src.core.optimizer import LearningRates, OptimizerState, TrainConfig, lr_schedule, sgd_step
from src.data.dataset import Dataset, Split
from src.domain.model_state import ModelState
from src.errors import DataError, NumericError
from src.infrastructure.event_bus import Event, EventBus, EventType

logger = logging.getLogger("Trainer")

TRAIN_LOG_COLUMNS = ["epoch", "lr_image", "lr_cat", "loss_total", "loss_ma", "asmr_value"]
PRETRAIN_LOG_COLUMNS = ["epoch", "lr", "loss", "accuracy"]

Evaluator = Callable[[ModelState], Dict[str, float]]


@dataclass
class PretrainResult:
    state: ModelState
    history: pd.DataFrame


@dataclass
class TrainResult:
    state: ModelState
    optimizer: OptimizerState
    history: pd.DataFrame


def batch_order(n: int, batch_size: int, seed: int, epoch: int, stream: int = 0) -> List[np.ndarray]:
    """Seeded shuffle for one epoch, cut into batches; the last partial batch is kept."""
    order = np.random.default_rng([seed, stream, epoch]).permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def training_part(dataset: Dataset) -> Dataset:
    part = dataset.subset(Split.TRAIN) if dataset.splits is not None else dataset
    if len(part) == 0:
        raise DataError("No training samples")
    return part


def _finite(value: float, where: str):
    if not np.isfinite(value):
        raise NumericError(f"Non-finite loss {where}")


def pretrain(state: ModelState, dataset: Dataset, cfg: TrainConfig, bus: Optional[EventBus] = None,
             head_hidden: Tuple[int, ...] = (512, 256, 128)) -> PretrainResult:
    """
    Attribute-classification pretraining of the image trunk: one classifier
    stack per attribute group, trained with the summed softmax cross-entropy.
    The heads are dropped from the returned state.
    """
    bus = bus or EventBus()
    train_set = training_part(dataset)
    labels = train_set.labels()
    work = state.copy() if state.pretrain_heads else state.with_heads(dataset.schema, head_hidden)
    opt = OptimizerState.initialize(work, cfg)
    opt.learning_rates = LearningRates(cfg.pretrain_lr, cfg.pretrain_lr)

    bus.publish(Event(EventType.RUN_STARTED, {"stage": "pretrain", "epochs": cfg.pretrain_epochs}))
    history = []
    for epoch in range(cfg.pretrain_epochs):
        for b, idx in enumerate(batch_order(len(train_set), cfg.batch_size, cfg.seed, epoch, stream=1)):
            result, tape = classification_objective(work, train_set.features[idx], labels[idx])
            _finite(result.value, f"in pretraining epoch {epoch}, batch {b}")
            sgd_step(work, tape, opt, cfg)
        opt.epoch = epoch + 1

        result, _ = classification_objective(work, train_set.features, labels)
        _finite(result.value, f"after pretraining epoch {epoch}")
        row = {"epoch": epoch, "lr": cfg.pretrain_lr, "loss": result.value,
               "accuracy": float(np.mean(list(result.group_accuracy.values())))}
        row.update({f"acc_{name}": acc for name, acc in result.group_accuracy.items()})
        history.append(row)
        logger.info(f"Pretrain epoch {epoch}: loss {row['loss']:.4f}, accuracy {row['accuracy']:.3f}")
        bus.publish(Event(EventType.EPOCH_COMPLETED, {"stage": "pretrain", "epoch": epoch, "state": work,
                                                      "optimizer": opt, "metrics": row}))

    bus.publish(Event(EventType.RUN_COMPLETED, {"stage": "pretrain"}))
    columns = PRETRAIN_LOG_COLUMNS + [f"acc_{g.name}" for g in dataset.schema.groups]
    return PretrainResult(work.without_heads(), pd.DataFrame(history, columns=columns))


def train(state: ModelState, dataset: Dataset, loss_cfg: LossConfig, cfg: TrainConfig,
          bus: Optional[EventBus] = None, optimizer: Optional[OptimizerState] = None,
          evaluator: Optional[Evaluator] = None) -> TrainResult:
    """
    Joint training of both encoders and the Hamming weights on the combined
    objective. Prototypes cover every unique training category each step.
    Resumes from `optimizer.epoch` when an optimizer state is given. The
    Hamming weights stay frozen unless the loss config learns them.
    """
    bus = bus or EventBus()
    train_set = training_part(dataset)
    table = train_set.unique_categories().astype(np.float64)
    index = train_set.category_index(table)
    work = state.without_heads()
    opt = optimizer if optimizer is not None else OptimizerState.initialize(work, cfg)

    logger.info(f"Training on {len(train_set)} images, {table.shape[0]} categories, "
                f"variant={loss_cfg.variant.value}, lambda={loss_cfg.lam}, asmr={'on' if loss_cfg.use_asmr else 'off'}")
    bus.publish(Event(EventType.RUN_STARTED, {"stage": "train", "epochs": cfg.epochs, "start": opt.epoch}))
    history = []
    for epoch in range(opt.epoch, cfg.epochs):
        opt.learning_rates = lr_schedule(epoch, cfg)
        totals = np.zeros(3)
        for b, idx in enumerate(batch_order(len(train_set), cfg.batch_size, cfg.seed, epoch)):
            batch = Batch(train_set.features[idx], index[idx], table)
            breakdown, tape = total_loss(work, batch, loss_cfg)
            _finite(breakdown.total, f"at epoch {epoch}, batch {b}")
            if not loss_cfg.learns_hamming_weights:
                tape.discard("hamming.w")
            sgd_step(work, tape, opt, cfg)
            totals += len(idx) * np.array([breakdown.total, breakdown.ma, breakdown.asmr])
            bus.publish(Event(EventType.BATCH_COMPLETED, {"stage": "train", "epoch": epoch, "batch": b,
                                                          "loss": breakdown}))
        opt.epoch = epoch + 1
        means = totals / len(train_set)
        row = {"epoch": epoch, "lr_image": opt.learning_rates.image, "lr_cat": opt.learning_rates.category,
               "loss_total": means[0], "loss_ma": means[1], "asmr_value": means[2]}
        if evaluator is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            row.update(evaluator(work))
        history.append(row)
        logger.info(f"Epoch {epoch}: total {means[0]:.4f} (ma {means[1]:.4f}, asmr {means[2]:.4f})")
        bus.publish(Event(EventType.EPOCH_COMPLETED, {"stage": "train", "epoch": epoch, "state": work,
                                                      "optimizer": opt, "metrics": row}))

    bus.publish(Event(EventType.RUN_COMPLETED, {"stage": "train", "state": work}))
    frame = pd.DataFrame(history)
    if frame.empty:
        frame = pd.DataFrame(columns=TRAIN_LOG_COLUMNS)
    return TrainResult(work, opt, frame)
