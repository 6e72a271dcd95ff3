"""
Seeded toy instances for verifying the analytic gradients of the training
objective (both encoders, the Hamming weights, the l2 normalisation) and of
the attribute-classification pretraining loss against central differences.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.objective import Batch, LossConfig, Variant, classification_objective, total_loss
from src.domain.gradcheck import GradCheckReport, grad_check
from src.domain.model_state import HammingWeights, ModelConfig, ModelState
from src.domain.schema import AttributeSchema
from src.errors import NumericError

logger = logging.getLogger("GradCheck")

KINK_FLOOR = 1e-3
COSINE_CEILING = 0.999
MAX_ATTEMPTS = 100


@dataclass
class GradCheckConfig:
    instances: int = 20
    step: float = 1e-5
    tolerance: float = 1e-4
    sigma: float = 2.0
    gamma: float = 0.1
    lam: float = 4.0
    variants: Tuple[str, ...] = ("full", "no_delta", "uniform_w", "l2norm_w")
    pretrain: bool = True
    inject_bug: Optional[str] = None  # parameter block whose analytic gradient gets corrupted

    def __post_init__(self):
        self.variants = tuple(Variant(v).value for v in self.variants)


@dataclass
class ToyInstance:
    state: ModelState
    batch: Batch
    labels: np.ndarray


@dataclass
class SuiteReport:
    tolerance: float
    frame: pd.DataFrame = field(default_factory=pd.DataFrame)

    @property
    def passed(self) -> bool:
        return bool(self.frame["passed"].all()) if len(self.frame) else True

    @property
    def max_relative_error(self) -> float:
        return float(self.frame["max_rel_error"].max()) if len(self.frame) else 0.0

    def summary(self) -> pd.DataFrame:
        """Worst error per parameter block across every instance."""
        grouped = self.frame.groupby(["check", "block"], sort=False)
        return grouped.agg(max_rel_error=("max_rel_error", "max"), passed=("passed", "all")).reset_index()


TOY_SCHEMA_SIZES = (2, 3, 2)
TOY_MODEL = ModelConfig(image_hidden=(8, 5), category_hidden=(8, 5), embedding_dim=4, head_hidden=(6,))
TOY_INPUT_DIM = 6
TOY_CATEGORIES = 3
TOY_IMAGES = 4


def _draw(seed: int, attempt: int) -> ToyInstance:
    rng = np.random.default_rng([seed, attempt])
    schema = AttributeSchema.from_sizes(TOY_SCHEMA_SIZES)
    combos = list(itertools.product(*(range(s) for s in schema.group_sizes)))
    table = np.zeros((TOY_CATEGORIES, schema.d_pc))
    for row, pick in enumerate(rng.choice(len(combos), size=TOY_CATEGORIES, replace=False)):
        for g, attribute in enumerate(combos[pick]):
            table[row, schema.group_slice(g).start + attribute] = 1.0
    index = np.concatenate([np.arange(TOY_CATEGORIES), rng.integers(TOY_CATEGORIES, size=TOY_IMAGES - TOY_CATEGORIES)])
    features = rng.standard_normal((TOY_IMAGES, TOY_INPUT_DIM))

    state = ModelState.initialize(TOY_MODEL, TOY_INPUT_DIM, schema, seed=int(rng.integers(2**31)))
    state.hamming_weights = HammingWeights(rng.uniform(0.05, 0.5, schema.d_pc))
    state = state.with_heads(schema, TOY_MODEL.head_hidden)
    labels = schema.labels(table[index].astype(np.int8))
    return ToyInstance(state, Batch(features, index, table), labels)


def _well_conditioned(toy: ToyInstance) -> bool:
    state, batch = toy.state, toy.batch
    if state.image_encoder.pre_activation_floor(batch.features) < KINK_FLOOR:
        return False
    if state.category_encoder.pre_activation_floor(batch.category_table) < KINK_FLOOR:
        return False
    trunk = state.image_encoder.trunk(batch.features)
    if any(head.pre_activation_floor(trunk) < KINK_FLOOR for head in state.pretrain_heads.values()):
        return False
    F = state.image_encoder.forward(batch.features)
    G = state.category_encoder.forward(batch.category_table)
    positives = np.sum(F * G[batch.category_index], axis=1)
    return float(np.abs(positives).max()) <= COSINE_CEILING


def toy_instance(seed: int) -> ToyInstance:
    """Redraws until no ReLU input sits near its kink and no positive cosine is near +-1."""
    for attempt in range(MAX_ATTEMPTS):
        toy = _draw(seed, attempt)
        if _well_conditioned(toy):
            return toy
    raise NumericError(f"No well-conditioned toy instance for seed {seed}")


def _corrupt(f: Callable, block: str) -> Callable:
    def corrupted(state):
        value, tape = f(state)
        tape[block] = tape[block] * 1.5 + 1e-3
        return value, tape
    return corrupted


def _rows(report: GradCheckReport, seed: int, check: str) -> List[dict]:
    frame = report.to_frame()
    frame.insert(0, "check", check)
    frame.insert(0, "instance", seed)
    return frame.to_dict("records")


def run_gradcheck(cfg: GradCheckConfig) -> SuiteReport:
    rows: List[dict] = []
    for seed in range(cfg.instances):
        toy = toy_instance(seed)
        joint = toy.state.without_heads()
        for variant in cfg.variants:
            loss_cfg = LossConfig(sigma=cfg.sigma, gamma=cfg.gamma, lam=cfg.lam, variant=variant)

            def objective(state, loss_cfg=loss_cfg):
                breakdown, tape = total_loss(state, toy.batch, loss_cfg)
                return breakdown.total, tape

            if cfg.inject_bug and cfg.inject_bug in joint.parameters():
                objective = _corrupt(objective, cfg.inject_bug)
            report = grad_check(objective, joint, step=cfg.step, tolerance=cfg.tolerance)
            rows.extend(_rows(report, seed, variant))

        if cfg.pretrain:
            def pretraining(state):
                result, tape = classification_objective(state, toy.batch.features, toy.labels)
                return result.value, tape

            blocks = [name for name in toy.state.parameters() if name.startswith(("image.", "heads."))]
            if cfg.inject_bug and cfg.inject_bug in blocks:
                pretraining = _corrupt(pretraining, cfg.inject_bug)
            report = grad_check(pretraining, toy.state, step=cfg.step, tolerance=cfg.tolerance, blocks=blocks)
            rows.extend(_rows(report, seed, "pretrain"))

    suite = SuiteReport(cfg.tolerance, pd.DataFrame(rows))
    logger.info(f"{cfg.instances} toy instances: {'PASS' if suite.passed else 'FAIL'} "
                f"(max rel error {suite.max_relative_error:.3e})")
    return suite
