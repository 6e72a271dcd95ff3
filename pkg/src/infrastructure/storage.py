"""
On-disk dataset format.

    schema.json    {"groups": [{"name": ..., "attributes": [...]}, ...]}
    samples.jsonl  one {"id", "attributes": {group: attribute}, "features": [...]} per line
    splits.json    {"splits": {sample_id: "train" | "test_seen" | "test_unseen"}}
"""
import json
import logging
import os
from typing import Dict, List, Optional

import numpy as np

from src.data.dataset import Dataset, Split
from src.domain.schema import AttributeSchema, PersonCategory, decode_category, encode_category
from src.errors import DataError

logger = logging.getLogger("DatasetStore")

SCHEMA_FILE = "schema.json"
SAMPLES_FILE = "samples.jsonl"
SPLITS_FILE = "splits.json"


def load_schema(path: str) -> AttributeSchema:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Schema file not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"Schema file {path} is not valid JSON (line {e.lineno}): {e.msg}")
    return AttributeSchema.from_dict(document)


def save_schema(schema: AttributeSchema, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2)
        f.write("\n")


def save(dataset: Dataset, directory: str) -> Dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {"schema": os.path.join(directory, SCHEMA_FILE), "samples": os.path.join(directory, SAMPLES_FILE)}
    save_schema(dataset.schema, paths["schema"])
    with open(paths["samples"], "w", encoding="utf-8") as f:
        for sample in dataset:
            record = {
                "id": sample.sample_id,
                "attributes": decode_category(sample.category, dataset.schema),
                "features": [float(v) for v in sample.features],
            }
            f.write(json.dumps(record) + "\n")
    if dataset.splits is not None:
        paths["splits"] = os.path.join(directory, SPLITS_FILE)
        manifest = {"splits": {sid: tag.value for sid, tag in zip(dataset.sample_ids, dataset.splits)}}
        with open(paths["splits"], "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)
            f.write("\n")
    logger.info(f"Saved {len(dataset)} samples to {directory}")
    return paths


def _read_samples(path: str, schema: AttributeSchema):
    ids: List[str] = []
    features: List[List[float]] = []
    categories: List[np.ndarray] = []
    problems: List[str] = []
    feature_dim: Optional[int] = None
    seen = set()
    try:
        handle = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"Samples file not found: {path}")
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                problems.append(f"line {line_no}: invalid JSON ({e.msg})")
                continue
            if not isinstance(record, dict) or not {"id", "attributes", "features"} <= set(record):
                problems.append(f"line {line_no}: record needs 'id', 'attributes' and 'features'")
                continue
            sample_id = str(record["id"])
            where = f"line {line_no} (sample {sample_id})"
            if sample_id in seen:
                problems.append(f"{where}: duplicate sample id")
                continue
            seen.add(sample_id)
            try:
                category = encode_category(record["attributes"], schema)
            except DataError as e:
                problems.extend(f"{where}: {p}" for p in (e.problems or [str(e)]))
                continue
            vector = record["features"]
            if not isinstance(vector, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector):
                problems.append(f"{where}: features must be a list of numbers")
                continue
            if feature_dim is None:
                feature_dim = len(vector)
            elif len(vector) != feature_dim:
                problems.append(f"{where}: feature_dim {len(vector)} differs from {feature_dim}")
                continue
            ids.append(sample_id)
            features.append(vector)
            categories.append(category.bits)
    if problems:
        raise DataError(f"Invalid samples file {path}", problems)
    if not ids:
        raise DataError(f"Samples file {path} holds no samples")
    return ids, np.array(features, dtype=np.float64), np.stack(categories)


def _read_splits(path: str, sample_ids: List[str]) -> List[Split]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Split manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"Split manifest {path} is not valid JSON (line {e.lineno}): {e.msg}")
    entries = manifest.get("splits", {}) if isinstance(manifest, dict) else {}
    problems = [f"sample {sid} has no split tag" for sid in sample_ids if sid not in entries]
    problems += [f"split tag for unknown sample {sid}" for sid in entries if sid not in set(sample_ids)]
    valid = {s.value for s in Split}
    problems += [f"sample {sid}: unknown split '{tag}'" for sid, tag in entries.items() if tag not in valid]
    if problems:
        raise DataError(f"Invalid split manifest {path}", problems)
    return [Split(entries[sid]) for sid in sample_ids]


def load(schema_path: str, samples_path: str, split_path: Optional[str] = None,
         drop_singletons: bool = False) -> Dataset:
    schema = load_schema(schema_path)
    ids, features, categories = _read_samples(samples_path, schema)
    splits = _read_splits(split_path, ids) if split_path else None
    dataset = Dataset(schema, ids, features, categories, splits)

    counts = dataset.category_counts()
    singletons = counts[counts == 1]
    if len(singletons):
        logger.warning(f"{len(singletons)} person categories have a single sample image")
        if drop_singletons:
            keys = ["".join(str(b) for b in row) for row in dataset.categories]
            keep = np.array([i for i, k in enumerate(keys) if k not in singletons.index], dtype=np.int64)
            dataset = dataset.take(keep)
            logger.info(f"Dropped {len(singletons)} single-sample categories")
    if dataset.splits is not None:
        dataset.check_no_leakage()
    return dataset


def load_directory(directory: str, drop_singletons: bool = False) -> Dataset:
    split_path = os.path.join(directory, SPLITS_FILE)
    return load(os.path.join(directory, SCHEMA_FILE), os.path.join(directory, SAMPLES_FILE),
                split_path if os.path.exists(split_path) else None, drop_singletons)
