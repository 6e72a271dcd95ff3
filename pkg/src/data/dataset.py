import enum
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.domain.schema import AttributeSchema, PersonCategory
from src.errors import DataError, DimensionError


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST_SEEN = "test_seen"
    TEST_UNSEEN = "test_unseen"


TEST_SPLITS = (Split.TEST_SEEN, Split.TEST_UNSEEN)


@dataclass(frozen=True)
class Sample:
    sample_id: str
    features: np.ndarray
    category: PersonCategory
    split: Optional[Split]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array)
    array.setflags(write=False)
    return array


class Dataset:
    """
    Image feature vectors with their recorded person categories and optional
    split tags. Immutable: every array is read-only and transformations return
    new datasets.
    """

    def __init__(self, schema: AttributeSchema, sample_ids: Sequence[str], features: np.ndarray,
                 categories: np.ndarray, splits: Optional[Sequence[Optional[str]]] = None):
        features = np.asarray(features, dtype=np.float64)
        categories = np.asarray(categories, dtype=np.int8)
        n = len(sample_ids)
        if features.ndim != 2 or features.shape[0] != n:
            raise DimensionError(f"Expected {n} feature rows, got array of shape {features.shape}")
        if categories.shape != (n, schema.d_pc):
            raise DimensionError(f"Expected categories of shape ({n}, {schema.d_pc}), got {categories.shape}")
        if len(set(sample_ids)) != n:
            raise DataError("Sample ids must be unique")
        if not np.all(np.isfinite(features)):
            raise DataError("Feature vectors must be finite")
        problems = []
        for sample_id, bits in zip(sample_ids, categories):
            problems.extend(f"sample {sample_id}: {p}" for p in schema.check_bits(bits))
        if problems:
            raise DataError("Invalid person categories", problems)

        self.schema = schema
        self.sample_ids = tuple(str(s) for s in sample_ids)
        self.features = _frozen(features)
        self.categories = _frozen(categories)
        if splits is None:
            self.splits = None
        else:
            if len(splits) != n:
                raise DimensionError("One split tag per sample is required")
            self.splits = tuple(Split(s) if s is not None else None for s in splits)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def __iter__(self) -> Iterator[Sample]:
        for i, sample_id in enumerate(self.sample_ids):
            yield Sample(sample_id, self.features[i], PersonCategory(self.categories[i]),
                         self.splits[i] if self.splits else None)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.schema == other.schema and self.sample_ids == other.sample_ids
                and self.splits == other.splits
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.categories, other.categories))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        splits = [self.splits[i] for i in indices] if self.splits else None
        return Dataset(self.schema, [self.sample_ids[i] for i in indices],
                       self.features[indices], self.categories[indices], splits)

    def with_splits(self, splits: Sequence[Optional[str]]) -> "Dataset":
        return Dataset(self.schema, self.sample_ids, self.features, self.categories, splits)

    def indices(self, *splits: Split) -> np.ndarray:
        if self.splits is None:
            raise DataError("Dataset has no split tags")
        wanted = {Split(s) for s in splits}
        return np.array([i for i, tag in enumerate(self.splits) if tag in wanted], dtype=np.int64)

    def subset(self, *splits: Split) -> "Dataset":
        return self.take(self.indices(*splits))

    def unique_categories(self) -> np.ndarray:
        """Distinct category rows in lexicographic order."""
        if len(self) == 0:
            return np.zeros((0, self.schema.d_pc), dtype=np.int8)
        return np.unique(self.categories, axis=0)

    def category_index(self, table: np.ndarray) -> np.ndarray:
        """Row of `table` holding each sample's category."""
        lookup = {row.tobytes(): i for i, row in enumerate(np.asarray(table, dtype=np.int8))}
        try:
            return np.array([lookup[row.tobytes()] for row in self.categories], dtype=np.int64)
        except KeyError:
            raise DataError("Sample category missing from the category table")

    def labels(self) -> np.ndarray:
        return self.schema.labels(self.categories)

    def category_counts(self) -> pd.Series:
        keys = ["".join(str(b) for b in row) for row in self.categories]
        return pd.Series(keys, dtype=object).value_counts()

    def check_no_leakage(self):
        train = {row.tobytes() for row in self.subset(Split.TRAIN).categories}
        unseen = {row.tobytes() for row in self.subset(Split.TEST_UNSEEN).categories}
        if train & unseen:
            raise DataError(f"{len(train & unseen)} unseen-test categories also appear in train")

    def stats(self) -> pd.DataFrame:
        rows: List[dict] = []
        tags = list(Split) if self.splits else []
        for tag in tags:
            part = self.subset(tag)
            rows.append({"split": tag.value, "n_samples": len(part), "n_categories": part.unique_categories().shape[0]})
        rows.append({"split": "all", "n_samples": len(self), "n_categories": self.unique_categories().shape[0]})
        return pd.DataFrame(rows, columns=["split", "n_samples", "n_categories"])
