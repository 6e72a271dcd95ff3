"""
Matched-seed comparisons: the ASMR ablation variants (with and without
pretraining, with the regulariser switched off, and the three regulariser
variants) and one-key hyper-parameter sweeps. Both emit one wide metrics row
per (setting, seed) with the column naming of the evaluation report.
"""
import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from src.core.objective import LossConfig
from src.core.trainer import pretrain, train
from src.data.dataset import Dataset
from src.domain.model_state import ModelState
from src.evaluation.retrieval import evaluate, metrics_to_wide
from src.infrastructure.event_bus import EventBus
from src.interface.run_config import RunConfig

logger = logging.getLogger("Ablation")

DatasetFactory = Callable[[RunConfig], Dataset]


@dataclass(frozen=True)
class VariantSpec:
    name: str
    pretrained: bool
    use_asmr: bool
    variant: str = "full"


VARIANTS = {
    "baseline": VariantSpec("baseline", pretrained=False, use_asmr=False),
    "baseline+pretrain": VariantSpec("baseline+pretrain", pretrained=True, use_asmr=False),
    "full": VariantSpec("full", pretrained=True, use_asmr=True, variant="full"),
    "no_delta": VariantSpec("no_delta", pretrained=True, use_asmr=True, variant="no_delta"),
    "uniform_w": VariantSpec("uniform_w", pretrained=True, use_asmr=True, variant="uniform_w"),
    "l2norm_w": VariantSpec("l2norm_w", pretrained=True, use_asmr=True, variant="l2norm_w"),
}


def variant_loss(spec: VariantSpec, loss: LossConfig) -> LossConfig:
    if not spec.use_asmr:
        return replace(loss, lam=0.0, use_asmr=False)
    return replace(loss, variant=spec.variant, use_asmr=True)


def initial_state(config: RunConfig, dataset: Dataset) -> ModelState:
    return ModelState.initialize(config.model, dataset.feature_dim, dataset.schema, config.seed)


def fit_and_evaluate(config: RunConfig, dataset: Dataset, loss: LossConfig, start: ModelState,
                     bus: Optional[EventBus] = None) -> Dict[str, float]:
    result = train(start, dataset, loss, config.train, bus=bus)
    metrics, _ = evaluate(result.state, dataset, config.eval.ks, variant=loss.variant)
    record = metrics_to_wide(metrics)
    record["final_loss"] = float(result.history["loss_total"].iloc[-1]) if len(result.history) else float("nan")
    return record


def run_ablation(config: RunConfig, dataset_for: DatasetFactory, bus: Optional[EventBus] = None) -> pd.DataFrame:
    rows: List[dict] = []
    for seed in config.ablation.seeds:
        seeded = config.with_seed(seed)
        dataset = dataset_for(seeded)
        state = initial_state(seeded, dataset)
        pretrained = None
        for name in config.ablation.variants:
            spec = VARIANTS[name]
            if spec.pretrained and pretrained is None:
                pretrained = pretrain(state, dataset, seeded.train, bus=bus, head_hidden=seeded.model.head_hidden).state
            start = pretrained if spec.pretrained else state
            record = fit_and_evaluate(seeded, dataset, variant_loss(spec, seeded.loss), start, bus)
            rows.append({"variant": name, "seed": seed, **record})
            logger.info(f"seed {seed} {name}: rank1_all={record.get('rank1_all', float('nan')):.3f}")
    return _ordered(pd.DataFrame(rows), ["variant", "seed"])


def run_sweep(config: RunConfig, key: str, values: Sequence[Any], dataset_for: DatasetFactory,
              bus: Optional[EventBus] = None) -> pd.DataFrame:
    """Retrain the full pipeline (pretraining included when enabled) for every value of `key`."""
    rows: List[dict] = []
    for value in values:
        for seed in config.ablation.seeds:
            seeded = config.with_value(key, value).with_seed(seed)
            dataset = dataset_for(seeded)
            state = initial_state(seeded, dataset)
            if seeded.train.pretrain_epochs > 0:
                state = pretrain(state, dataset, seeded.train, bus=bus, head_hidden=seeded.model.head_hidden).state
            record = fit_and_evaluate(seeded, dataset, seeded.loss, state, bus)
            rows.append({"key": key, "value": value, "seed": seed, **record})
            logger.info(f"{key}={value} seed {seed}: rank1_all={record.get('rank1_all', float('nan')):.3f}")
    return _ordered(pd.DataFrame(rows), ["key", "value", "seed"])


def _ordered(frame: pd.DataFrame, leading: List[str]) -> pd.DataFrame:
    metric_columns = [c for c in frame.columns if c not in leading]
    return frame[leading + metric_columns]


def summarize(frame: pd.DataFrame, by: Sequence[str]) -> pd.DataFrame:
    """Mean of every metric column over seeds."""
    metrics = [c for c in frame.columns if c not in set(by) | {"seed", "key"}]
    return frame.groupby(list(by), sort=False)[metrics].mean().reset_index()
