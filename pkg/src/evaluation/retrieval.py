"""
Attribute-query retrieval over the joint embedding space, CMC / mAP, and the
similarity-versus-delta rank-correlation diagnostic.

A gallery item is relevant to a query when it carries every attribute the
query specifies; for fully specified queries that is plain category equality.
Metric arithmetic runs on Fractions so results are exact.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from src.core.objective import Variant, effective_weights, pair_indices, pairwise_deltas
from src.data.dataset import Dataset, Split
from src.domain.model_state import ModelState
from src.domain.schema import AttributeSchema, PersonCategory
from src.errors import ConfigError, DataError, DimensionError, NumericError

logger = logging.getLogger("Retrieval")

EVAL_SPLITS = {
    "test_seen": (Split.TEST_SEEN,),
    "test_unseen": (Split.TEST_UNSEEN,),
    "all": (Split.TEST_SEEN, Split.TEST_UNSEEN),
}
METRIC_COLUMNS = ["metric", "k", "split", "value"]


@dataclass
class Gallery:
    embeddings: np.ndarray
    sample_ids: Tuple[str, ...]
    categories: np.ndarray

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        self.sample_ids = tuple(self.sample_ids)
        self.categories = np.atleast_2d(np.asarray(self.categories, dtype=np.int8))
        n = len(self.sample_ids)
        if n and (self.embeddings.shape[0] != n or self.categories.shape[0] != n):
            raise DimensionError("Gallery embeddings, ids and categories must align")
        if n and np.abs(np.linalg.norm(self.embeddings, axis=1) - 1.0).max() > 1e-4:
            raise NumericError("Gallery embeddings must be unit norm")

    @classmethod
    def from_dataset(cls, state: ModelState, dataset: Dataset) -> "Gallery":
        if len(dataset) == 0:
            return cls(np.zeros((0, state.image_encoder.out_dim)), (), np.zeros((0, dataset.schema.d_pc)))
        return cls(state.image_encoder.forward(dataset.features), dataset.sample_ids, dataset.categories)

    def __len__(self):
        return len(self.sample_ids)


@dataclass
class RetrievalRun:
    query: PersonCategory
    ranking: Tuple[str, ...]
    similarities: np.ndarray
    relevance: np.ndarray
    n_relevant: int

    def top(self, k: int) -> "RetrievalRun":
        return RetrievalRun(self.query, self.ranking[:k], self.similarities[:k], self.relevance[:k], self.n_relevant)


def matches(query: PersonCategory, categories: np.ndarray) -> np.ndarray:
    """Gallery rows carrying every attribute set in the query (blank groups match anything)."""
    specified = query.bits.astype(bool)
    return np.all(np.asarray(categories)[:, specified] == 1, axis=1)


def rank(query: PersonCategory, query_embedding: np.ndarray, gallery: Gallery) -> RetrievalRun:
    """Descending cosine similarity, ties broken by ascending sample id."""
    similarities = gallery.embeddings @ query_embedding
    order = np.lexsort((np.array(gallery.sample_ids), -similarities))
    relevant = matches(query, gallery.categories)
    return RetrievalRun(query, tuple(gallery.sample_ids[i] for i in order), similarities[order],
                        relevant[order], int(relevant.sum()))


def retrieve(query: PersonCategory, state: ModelState, gallery: Gallery, k: Optional[int] = None) -> RetrievalRun:
    if len(gallery) == 0:
        raise DataError("Empty gallery")
    if k is not None and k < 1:
        raise ConfigError("k must be >= 1")
    run = rank(query, state.category_encoder.forward(query.bits), gallery)
    return run.top(min(k, len(gallery))) if k is not None else run


def _check_runs(runs: Sequence[RetrievalRun]):
    if not runs:
        raise DataError("No retrieval runs to score")
    empty = [run.query.category_id for run in runs if run.n_relevant == 0]
    if empty:
        raise DataError("Runs without any relevant gallery item", empty)


def cmc(runs: Sequence[RetrievalRun], k: int) -> float:
    """Fraction of runs with a relevant item among the top k."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    _check_runs(runs)
    hits = sum(1 for run in runs if run.relevance[:k].any())
    return float(Fraction(hits, len(runs)))


def average_precision(run: RetrievalRun) -> Fraction:
    """Uninterpolated AP: mean of precision@r over the ranks r of relevant items."""
    if run.n_relevant == 0:
        raise DataError(f"Query {run.query.category_id} has no relevant gallery item")
    hits, total = 0, Fraction(0)
    for position, relevant in enumerate(run.relevance, start=1):
        if relevant:
            hits += 1
            total += Fraction(hits, position)
    return total / run.n_relevant


def mean_ap(runs: Sequence[RetrievalRun]) -> float:
    _check_runs(runs)
    return float(sum((average_precision(run) for run in runs), Fraction(0)) / len(runs))


@dataclass
class DiagnosticResult:
    rho: Optional[float]
    pairs: pd.DataFrame

    @property
    def defined(self) -> bool:
        return self.rho is not None


def spearman_alignment(similarities: np.ndarray, deltas: np.ndarray) -> Optional[float]:
    """Spearman rank correlation; None when either side is constant."""
    similarities, deltas = np.asarray(similarities, dtype=np.float64), np.asarray(deltas, dtype=np.float64)
    if similarities.shape != deltas.shape or similarities.size < 2:
        raise DimensionError("Need matching similarity and delta vectors with at least 2 pairs")
    if np.ptp(similarities) == 0 or np.ptp(deltas) == 0:
        return None
    return float(spearmanr(similarities, deltas)[0])


def semantic_alignment_diagnostic(state: ModelState, categories: Sequence[PersonCategory],
                                  variant: Variant = Variant.FULL) -> DiagnosticResult:
    """
    Rank correlation of prototype similarity with delta over all category pairs.
    delta uses the weights the variant trains with; no_delta falls back to the stored w.
    """
    if len(categories) < 3:
        raise DataError("The alignment diagnostic needs at least 3 categories")
    P = np.stack([c.bits for c in categories]).astype(np.float64)
    G = state.category_encoder.forward(P)
    i, j = pair_indices(len(categories))
    s = np.sum(G[i] * G[j], axis=1)
    weights = effective_weights(state.hamming_weights, variant, int(P[0].sum()))
    d = pairwise_deltas(P, state.hamming_weights if weights is None else weights)
    rho = spearman_alignment(s, d)
    if rho is None:
        logger.warning("Alignment correlation undefined: constant similarities or deltas")
    pairs = pd.DataFrame({
        "cat_i": [categories[a].category_id for a in i],
        "cat_j": [categories[b].category_id for b in j],
        "s": s,
        "delta": d,
    })
    return DiagnosticResult(rho, pairs)


def query_runs(state: ModelState, gallery: Gallery, queries: Sequence[PersonCategory]) -> Tuple[List[RetrievalRun], List[PersonCategory]]:
    """Full rankings for every query with at least one match, plus the excluded queries."""
    if not queries or len(gallery) == 0:
        return [], list(queries)
    Q = state.category_encoder.forward(np.stack([q.bits for q in queries]).astype(np.float64))
    runs, excluded = [], []
    for query, embedding in zip(queries, Q):
        run = rank(query, embedding, gallery)
        if run.n_relevant:
            runs.append(run)
        else:
            excluded.append(query)
    return runs, excluded


def _categories(rows: np.ndarray) -> List[PersonCategory]:
    return [PersonCategory(row) for row in rows]


def evaluate(state: ModelState, dataset: Dataset, ks: Sequence[int] = (1, 5, 10),
             queries: Optional[Sequence[PersonCategory]] = None,
             variant: Variant = Variant.FULL) -> Tuple[pd.DataFrame, DiagnosticResult]:
    """
    Rank-k and mAP on each test split (seen, unseen, both); queries default to
    every category of the test set, each scored against every split's gallery.
    """
    if dataset.splits is None:
        raise DataError("Evaluation needs split tags")
    test = dataset.subset(Split.TEST_SEEN, Split.TEST_UNSEEN)
    queries = list(queries) if queries is not None else _categories(test.unique_categories())
    rows = []
    for name, tags in EVAL_SPLITS.items():
        gallery = Gallery.from_dataset(state, dataset.subset(*tags))
        runs, excluded = query_runs(state, gallery, queries)
        rows.append({"metric": "n_queries", "k": None, "split": name, "value": float(len(runs))})
        rows.append({"metric": "excluded_queries", "k": None, "split": name, "value": float(len(excluded))})
        if not runs:
            logger.info(f"Split {name}: no scorable queries")
            continue
        for k in ks:
            rows.append({"metric": "rank", "k": int(k), "split": name, "value": cmc(runs, k)})
        rows.append({"metric": "map", "k": None, "split": name, "value": mean_ap(runs)})

    diagnostic = semantic_alignment_diagnostic(state, _categories(dataset.unique_categories()), variant)
    rows.append({"metric": "spearman_rho", "k": None, "split": "categories",
                 "value": diagnostic.rho if diagnostic.defined else float("nan")})
    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    metrics["k"] = metrics["k"].astype("Int64")
    return metrics, diagnostic


def metrics_to_wide(metrics: pd.DataFrame) -> Dict[str, float]:
    """One flat record per evaluation: rank{k}_{split}, map_{split}, spearman_rho."""
    record: Dict[str, float] = {}
    for row in metrics.itertuples(index=False):
        if row.metric == "rank":
            record[f"rank{int(row.k)}_{row.split}"] = row.value
        elif row.metric == "map":
            record[f"map_{row.split}"] = row.value
        elif row.metric == "spearman_rho":
            record["spearman_rho"] = row.value
    return record


def epoch_evaluator(dataset: Dataset):
    """Rank-1 on the seen and unseen test splits, for per-epoch tracking."""
    test = dataset.subset(Split.TEST_SEEN, Split.TEST_UNSEEN)
    queries = _categories(test.unique_categories())

    def evaluate_rank1(state: ModelState) -> Dict[str, float]:
        scores = {}
        for name in ("test_seen", "test_unseen"):
            gallery = Gallery.from_dataset(state, dataset.subset(*EVAL_SPLITS[name]))
            runs, _ = query_runs(state, gallery, queries)
            scores[f"rank1_{name.split('_')[1]}"] = cmc(runs, 1) if runs else float("nan")
        return scores

    return evaluate_rank1


def hamming_weights_frame(state: ModelState, schema: AttributeSchema) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Learned w_k per bit, and their mean per attribute group."""
    labels = schema.bit_labels()
    bits = pd.DataFrame({
        "bit": np.arange(schema.d_pc),
        "group": [g for g, _ in labels],
        "attribute": [a for _, a in labels],
        "weight": state.hamming_weights.w,
    })
    groups = bits.groupby("group", sort=False)["weight"].mean().reset_index(name="mean_weight")
    return bits, groups
