"""
Synthetic attribute-structured image features: every image of a category is
M p + noise, with M a fixed seeded (feature_dim x d_pc) matrix whose columns
are scaled by per-attribute saliency.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data.dataset import Dataset, Split
from src.domain.schema import AttributeSchema
from src.errors import ConfigError, DataError

logger = logging.getLogger("Synthesizer")

ENUMERATION_LIMIT = 200_000


@dataclass
class SynthConfig:
    group_sizes: Tuple[int, ...] = (2, 5, 4, 2)
    n_categories: int = 60
    images_per_category: Union[int, Tuple[int, int]] = 30
    feature_dim: int = 64
    saliency: Union[float, Tuple[float, ...]] = 1.0
    group_saliency: Optional[Tuple[float, ...]] = None
    noise_std: float = 0.5
    label_flip_rate: float = 0.0
    unseen_fraction: float = 0.3
    test_fraction: float = 0.2
    seed: int = 0
    schema_path: Optional[str] = None

    def __post_init__(self):
        self.group_sizes = tuple(int(s) for s in self.group_sizes)
        if isinstance(self.images_per_category, (list, tuple)):
            self.images_per_category = tuple(int(v) for v in self.images_per_category)
        if isinstance(self.saliency, (list, tuple)):
            self.saliency = tuple(float(v) for v in self.saliency)
        if self.group_saliency is not None:
            self.group_saliency = tuple(float(v) for v in self.group_saliency)

    def validate(self, schema: AttributeSchema):
        problems = []
        capacity = math.prod(schema.group_sizes)
        if not 1 <= self.n_categories <= capacity:
            problems.append(f"n_categories={self.n_categories} outside [1, {capacity}] for this schema")
        counts = self.images_per_category
        low, high = counts if isinstance(counts, tuple) else (counts, counts)
        if low < 2 or high < low:
            problems.append("images_per_category must be >= 2 (single-image categories are outliers)")
        if self.feature_dim < 1:
            problems.append("feature_dim must be >= 1")
        if isinstance(self.saliency, tuple) and len(self.saliency) != schema.d_pc:
            problems.append(f"saliency needs {schema.d_pc} entries, got {len(self.saliency)}")
        if self.group_saliency is not None and len(self.group_saliency) != schema.n_groups:
            problems.append(f"group_saliency needs {schema.n_groups} entries")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        if not 0 <= self.label_flip_rate < 1:
            problems.append("label_flip_rate must lie in [0, 1)")
        if not 0 <= self.unseen_fraction <= 1:
            problems.append("unseen_fraction must lie in [0, 1]")
        if not 0 <= self.test_fraction < 1:
            problems.append("test_fraction must lie in [0, 1)")
        if problems:
            raise ConfigError("Invalid synthesis config", problems)


def saliency_scale(cfg: SynthConfig, schema: AttributeSchema) -> np.ndarray:
    scale = np.broadcast_to(np.asarray(cfg.saliency, dtype=np.float64), (schema.d_pc,)).copy()
    if cfg.group_saliency is not None:
        scale *= np.asarray(cfg.group_saliency)[schema.bit_groups()]
    return scale


def generator_matrix(cfg: SynthConfig, schema: AttributeSchema) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    return rng.standard_normal((cfg.feature_dim, schema.d_pc)) * saliency_scale(cfg, schema)


def _draw_categories(schema: AttributeSchema, n: int, rng: np.random.Generator) -> np.ndarray:
    sizes = schema.group_sizes
    capacity = math.prod(sizes)
    if capacity <= ENUMERATION_LIMIT:
        codes = [int(c) for c in rng.choice(capacity, size=n, replace=False)]
        choices = []
        for code in codes:
            digits = []
            for size in reversed(sizes):
                code, digit = divmod(code, size)
                digits.append(digit)
            choices.append(tuple(reversed(digits)))
    else:
        seen, choices = set(), []
        while len(choices) < n:
            pick = tuple(int(rng.integers(size)) for size in sizes)
            if pick not in seen:
                seen.add(pick)
                choices.append(pick)
    bits = np.zeros((n, schema.d_pc), dtype=np.int8)
    for row, picks in enumerate(choices):
        for g, attribute in enumerate(picks):
            bits[row, schema.group_slice(g).start + attribute] = 1
    return bits


def _flip_one_group(bits: np.ndarray, schema: AttributeSchema, rng: np.random.Generator) -> np.ndarray:
    flipped = bits.copy()
    g = int(rng.integers(schema.n_groups))
    window = schema.group_slice(g)
    current = int(flipped[window].argmax())
    replacement = (current + int(rng.integers(1, schema.groups[g].size))) % schema.groups[g].size
    flipped[window] = 0
    flipped[window.start + replacement] = 1
    return flipped


def generate(cfg: SynthConfig, schema: Optional[AttributeSchema] = None) -> Dataset:
    """
    Deterministic under cfg.seed. Label flips reassign one random group of the
    recorded category; the feature keeps coming from the true category.
    """
    schema = schema or AttributeSchema.from_sizes(cfg.group_sizes)
    cfg.validate(schema)
    M = generator_matrix(cfg, schema)
    categories = _draw_categories(schema, cfg.n_categories, np.random.default_rng([cfg.seed, 1]))

    rng = np.random.default_rng([cfg.seed, 2])
    counts = cfg.images_per_category
    if isinstance(counts, tuple):
        per_category = rng.integers(counts[0], counts[1] + 1, size=cfg.n_categories)
    else:
        per_category = np.full(cfg.n_categories, counts)

    true_bits = np.repeat(categories, per_category, axis=0)
    n = true_bits.shape[0]
    noise = rng.standard_normal((n, cfg.feature_dim)) * cfg.noise_std
    features = true_bits.astype(np.float64) @ M.T + noise

    recorded = true_bits.copy()
    flips = rng.random(n) < cfg.label_flip_rate
    for i in np.flatnonzero(flips):
        recorded[i] = _flip_one_group(true_bits[i], schema, rng)

    sample_ids = [f"s{i:06d}" for i in range(n)]
    logger.info(f"Generated {n} samples over {cfg.n_categories} categories ({int(flips.sum())} label flips)")
    return Dataset(schema, sample_ids, features, recorded)


def _round(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def split(dataset: Dataset, unseen_fraction: float, seed: int, test_fraction: float = 0.2) -> Dataset:
    """
    Category-level holdout plus a per-sample split of the seen categories.
    unseen_fraction < 1: round(fraction * n_categories) categories go to
    test_unseen and test_fraction of every seen category's samples go to
    test_seen. unseen_fraction == 1: pure category holdout, test_fraction of
    the categories are held out and test_seen stays empty.
    """
    if not 0 <= unseen_fraction <= 1 or not 0 <= test_fraction < 1:
        raise DataError("Split fractions out of range")
    categories = dataset.unique_categories()
    n_cat = categories.shape[0]
    pure_holdout = unseen_fraction >= 1
    n_unseen = _round((test_fraction if pure_holdout else unseen_fraction) * n_cat)
    if pure_holdout and n_unseen == 0:
        raise DataError("Pure category holdout needs test_fraction * n_categories >= 1")
    if n_unseen >= n_cat:
        raise DataError(f"Holding out {n_unseen} of {n_cat} categories leaves none for training")

    rng = np.random.default_rng([seed, 3])
    held_out = {categories[i].tobytes() for i in rng.permutation(n_cat)[:n_unseen]}
    index = dataset.category_index(categories)

    tags: List[Split] = [Split.TRAIN] * len(dataset)
    for c in range(n_cat):
        members = np.flatnonzero(index == c)
        if categories[c].tobytes() in held_out:
            for i in members:
                tags[i] = Split.TEST_UNSEEN
            continue
        if pure_holdout:
            continue
        n_test = _round(test_fraction * members.size)
        for i in rng.permutation(members)[:n_test]:
            tags[i] = Split.TEST_SEEN

    tagged = dataset.with_splits(tags)
    tagged.check_no_leakage()
    return tagged
