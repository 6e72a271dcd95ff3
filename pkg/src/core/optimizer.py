from dataclasses import dataclass, field
from typing import Dict, NamedTuple

import numpy as np

from src.domain.model_state import CATEGORY_GROUP, IMAGE_GROUP, ModelState, parameter_group
from src.domain.network import GradientTape
from src.errors import ConfigError, DimensionError, NumericError


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr_image: float = 1e-3
    lr_category_and_w: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_factor: float = 0.1
    decay_every: int = 5
    seed: int = 0
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-2
    checkpoint_every: int = 0  # 0: final checkpoint only
    eval_every: int = 0        # 0: no per-epoch retrieval evaluation

    def __post_init__(self):
        problems = []
        if self.epochs < 0 or self.pretrain_epochs < 0:
            problems.append("epoch counts must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not (self.lr_image > 0 and self.lr_category_and_w > 0 and self.pretrain_lr > 0):
            problems.append("learning rates must be > 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if not 0 < self.decay_factor <= 1:
            problems.append("decay_factor must lie in (0, 1]")
        if self.decay_every < 1:
            problems.append("decay_every must be >= 1")
        if self.checkpoint_every < 0 or self.eval_every < 0:
            problems.append("checkpoint_every and eval_every must be >= 0")
        if problems:
            raise ConfigError("Invalid training config", problems)


class LearningRates(NamedTuple):
    image: float
    category: float

    def for_group(self, group: str) -> float:
        return self.image if group == IMAGE_GROUP else self.category


@dataclass
class OptimizerState:
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    learning_rates: LearningRates = LearningRates(1e-3, 1e-2)

    @classmethod
    def initialize(cls, state: ModelState, cfg: TrainConfig) -> "OptimizerState":
        velocities = {name: np.zeros_like(value) for name, value in state.parameters().items()}
        return cls(velocities, 0, lr_schedule(0, cfg))


def lr_schedule(epoch: int, cfg: TrainConfig) -> LearningRates:
    """Step decay: base_lr * decay_factor ** floor(epoch / decay_every), per group."""
    factor = cfg.decay_factor ** (max(epoch, 0) // cfg.decay_every)
    return LearningRates(cfg.lr_image * factor, cfg.lr_category_and_w * factor)


def sgd_step(state: ModelState, grads: GradientTape, opt: OptimizerState, cfg: TrainConfig):
    """
    v <- momentum * v + (grad + weight_decay * theta); theta <- theta - lr * v.
    Only blocks present in `grads` move; parameters are updated in place.
    """
    bad = grads.non_finite_blocks()
    if bad:
        raise NumericError("Non-finite gradients", [f"block {name}" for name in bad])

    params = state.parameters()
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"Gradient for unknown parameter block '{name}'")
        theta = params[name]
        if grad.shape != theta.shape:
            raise DimensionError(f"Gradient shape {grad.shape} does not match {name} {theta.shape}")
        velocity = opt.velocities.get(name)
        if velocity is None:
            velocity = opt.velocities[name] = np.zeros_like(theta)
        velocity *= cfg.momentum
        velocity += grad + cfg.weight_decay * theta
        theta -= opt.learning_rates.for_group(parameter_group(name)) * velocity
    return state, opt
