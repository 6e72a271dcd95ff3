from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from src.core.objective import Variant, pairwise_deltas
from src.domain.schema import PersonCategory, encode_query
from src.errors import ConfigError, DataError
from src.evaluation.retrieval import (
    Gallery,
    RetrievalRun,
    average_precision,
    cmc,
    epoch_evaluator,
    evaluate,
    hamming_weights_frame,
    matches,
    mean_ap,
    metrics_to_wide,
    rank,
    retrieve,
    semantic_alignment_diagnostic,
    spearman_alignment,
)

QUERY = PersonCategory([1, 0, 0, 1])


def make_run(relevance):
    relevance = np.asarray(relevance, dtype=bool)
    ids = tuple(f"g{i:02d}" for i in range(relevance.size))
    return RetrievalRun(QUERY, ids, np.linspace(1, 0, relevance.size), relevance, int(relevance.sum()))


def brute_cmc(runs, k):
    hits = 0
    for run in runs:
        for position in range(min(k, len(run.relevance))):
            if run.relevance[position]:
                hits += 1
                break
    return hits / len(runs)


def brute_ap(run):
    precisions = []
    for r in range(1, len(run.relevance) + 1):
        if run.relevance[r - 1]:
            precisions.append(Fraction(int(run.relevance[:r].sum()), r))
    return sum(precisions, Fraction(0)) / int(run.relevance.sum())


def random_runs(rng, n, size=20):
    runs = []
    for _ in range(n):
        relevance = rng.random(size) < rng.uniform(0.05, 0.5)
        relevance[rng.integers(size)] = True
        runs.append(make_run(relevance))
    return runs


def test_singleton_gallery(small_state, small_dataset):
    category = small_dataset.categories[0]
    gallery = Gallery(np.array([[1.0, 0, 0, 0, 0, 0]]), ["only"], [category])
    run = retrieve(PersonCategory(category), small_state, gallery)
    assert run.ranking == ("only",)
    assert run.relevance.tolist() == [True]


def test_exact_match_dominates():
    embeddings = np.eye(4)
    gallery = Gallery(embeddings, ["a", "b", "c", "d"], [[0, 1, 0, 1]] * 4)
    run = rank(QUERY, embeddings[2], gallery)
    assert run.ranking[0] == "c"


def test_ties_break_by_ascending_sample_id():
    embeddings = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    gallery = Gallery(embeddings, ["zeta", "alpha", "mid"], [[1, 0, 0, 1]] * 3)
    run = rank(QUERY, np.array([1.0, 0.0]), gallery)
    assert run.ranking == ("alpha", "zeta", "mid")


def test_ranking_matches_sort_oracle(small_state, small_dataset, rng):
    gallery = Gallery.from_dataset(small_state, small_dataset.take(rng.permutation(len(small_dataset))[:10]))
    query = PersonCategory(small_dataset.categories[0])
    run = retrieve(query, small_state, gallery)
    q = small_state.category_encoder.forward(query.bits)
    scored = sorted(zip(gallery.sample_ids, gallery.embeddings @ q), key=lambda item: (-item[1], item[0]))
    assert list(run.ranking) == [sid for sid, _ in scored]
    assert sorted(run.ranking) == sorted(gallery.sample_ids)


def test_ranking_ignores_gallery_input_order(small_state, small_dataset, rng):
    query = PersonCategory(small_dataset.categories[0])
    base = retrieve(query, small_state, Gallery.from_dataset(small_state, small_dataset))
    for _ in range(3):
        shuffled = small_dataset.take(rng.permutation(len(small_dataset)))
        run = retrieve(query, small_state, Gallery.from_dataset(small_state, shuffled))
        assert run.ranking == base.ranking
        assert np.allclose(run.similarities, base.similarities)
        assert run.relevance.tolist() == base.relevance.tolist()


def test_top_k_is_clamped_to_the_gallery(small_state, small_dataset):
    gallery = Gallery.from_dataset(small_state, small_dataset.take(np.arange(5)))
    assert len(retrieve(PersonCategory(small_dataset.categories[0]), small_state, gallery, k=50).ranking) == 5
    assert len(retrieve(PersonCategory(small_dataset.categories[0]), small_state, gallery, k=2).ranking) == 2
    with pytest.raises(ConfigError):
        retrieve(PersonCategory(small_dataset.categories[0]), small_state, gallery, k=0)


def test_empty_gallery(small_state):
    with pytest.raises(DataError):
        retrieve(QUERY, small_state, Gallery(np.zeros((0, 6)), [], np.zeros((0, 4))))


def test_gallery_requires_unit_norm():
    with pytest.raises(Exception, match="unit norm"):
        Gallery(np.array([[2.0, 0.0]]), ["a"], [[1, 0, 0, 1]])


def test_cmc_threshold_behaviour():
    run = make_run([False, False, True, False, False])
    assert cmc([run], 1) == 0.0
    assert cmc([run], 5) == 1.0
    assert cmc([make_run([True, False])] * 3, 1) == 1.0
    with pytest.raises(ConfigError):
        cmc([run], 0)


def test_average_precision_examples():
    assert average_precision(make_run([False, True])) == Fraction(1, 2)
    assert average_precision(make_run([True, True, False])) == 1
    with pytest.raises(DataError):
        average_precision(make_run([False, False]))
    with pytest.raises(DataError):
        mean_ap([make_run([True]), make_run([False])])


def test_metrics_match_brute_force_exactly(rng):
    runs = random_runs(rng, 200)
    for k in (1, 5, 10, 20):
        assert cmc(runs, k) == brute_cmc(runs, k)
    assert mean_ap(runs) == float(sum((brute_ap(r) for r in runs), Fraction(0)) / len(runs))


def test_metric_properties(rng):
    runs = random_runs(rng, 30)
    curve = [cmc(runs, k) for k in range(1, 21)]
    assert curve == sorted(curve)
    assert curve[-1] == 1.0
    assert 0.0 <= mean_ap(runs) <= 1.0
    shuffled = [runs[i] for i in rng.permutation(len(runs))]
    assert mean_ap(shuffled) == mean_ap(runs)


def test_blank_query_matches_on_specified_groups(toy_schema):
    query = encode_query({"gender": "female"}, toy_schema)
    categories = np.array([
        [0, 1, 1, 0, 0, 1, 0],
        [1, 0, 1, 0, 0, 1, 0],
        [0, 1, 0, 0, 1, 0, 1],
    ])
    assert matches(query, categories).tolist() == [True, False, True]


def test_spearman_alignment_extremes(rng):
    d = rng.uniform(0, 1, 15)
    assert spearman_alignment(np.exp(d), d) == pytest.approx(1.0)
    assert spearman_alignment(-d ** 3, d) == pytest.approx(-1.0)
    assert spearman_alignment(np.ones(15), d) is None


def test_spearman_of_unrelated_values_is_small_on_average():
    rhos = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        rhos.append(spearman_alignment(rng.standard_normal(45), rng.standard_normal(45)))
    assert abs(np.mean(rhos)) < 0.1


def test_alignment_diagnostic_pairs_table(small_state, small_dataset):
    categories = [PersonCategory(row) for row in small_dataset.unique_categories()]
    result = semantic_alignment_diagnostic(small_state, categories)
    assert list(result.pairs.columns) == ["cat_i", "cat_j", "s", "delta"]
    assert len(result.pairs) == 12 * 11 // 2
    assert result.defined and -1.0 <= result.rho <= 1.0
    with pytest.raises(DataError):
        semantic_alignment_diagnostic(small_state, categories[:2])


def test_alignment_diagnostic_uses_the_variant_weights(small_state, small_dataset, rng):
    state = small_state.copy()
    state.hamming_weights.w[:] = rng.uniform(0.1, 2.0, 7)
    categories = [PersonCategory(row) for row in small_dataset.unique_categories()]
    P = small_dataset.unique_categories()
    w = state.hamming_weights.w
    expected = {
        Variant.FULL: pairwise_deltas(P, w),
        Variant.L2NORM_W: pairwise_deltas(P, w / np.linalg.norm(w)),
        Variant.UNIFORM_W: pairwise_deltas(P, np.full(7, 1 / 6)),
        Variant.NO_DELTA: pairwise_deltas(P, w),
    }
    for variant, deltas in expected.items():
        result = semantic_alignment_diagnostic(state, categories, variant)
        assert result.pairs["delta"].to_numpy() == pytest.approx(deltas)


def test_evaluate_reports_every_split(small_state, small_dataset):
    metrics, _ = evaluate(small_state, small_dataset, ks=(1, 5))
    assert list(metrics.columns) == ["metric", "k", "split", "value"]
    wide = metrics_to_wide(metrics)
    for split in ("test_seen", "test_unseen", "all"):
        assert wide[f"rank1_{split}"] <= wide[f"rank5_{split}"]
        assert 0.0 <= wide[f"map_{split}"] <= 1.0
    counts = metrics[metrics["metric"] == "n_queries"].set_index("split")["value"]
    excluded = metrics[metrics["metric"] == "excluded_queries"].set_index("split")["value"]
    # the 12 test categories: 9 seen, 3 unseen
    assert counts.to_dict() == {"test_seen": 9.0, "test_unseen": 3.0, "all": 12.0}
    assert excluded.to_dict() == {"test_seen": 3.0, "test_unseen": 9.0, "all": 0.0}
    assert "spearman_rho" in wide


def test_evaluate_is_pure(small_state, small_dataset):
    a, _ = evaluate(small_state, small_dataset)
    b, _ = evaluate(small_state, small_dataset)
    pd.testing.assert_frame_equal(a, b)


def test_epoch_evaluator_keys(small_state, small_dataset):
    scores = epoch_evaluator(small_dataset)(small_state)
    assert set(scores) == {"rank1_seen", "rank1_unseen"}


def test_hamming_weights_report(small_state, small_dataset):
    bits, groups = hamming_weights_frame(small_state, small_dataset.schema)
    assert len(bits) == 7
    assert groups["group"].tolist() == ["g0", "g1", "g2"]
    assert groups["mean_weight"].tolist() == pytest.approx([1 / 6] * 3)
