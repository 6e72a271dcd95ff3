import numpy as np
import pytest

from src.data.dataset import Dataset, Split
from src.data.synthetic import SynthConfig, generate, generator_matrix, split
from src.domain.schema import AttributeSchema
from src.errors import ConfigError, DataError, DimensionError


def test_generate_counts_and_validity(small_synth):
    dataset = generate(small_synth)
    assert len(dataset) == 12 * 6
    assert dataset.feature_dim == 10
    assert dataset.unique_categories().shape == (12, 7)
    assert (dataset.category_counts() == 6).all()
    assert dataset.sample_ids[0] == "s000000"


def test_generate_is_deterministic(small_synth):
    assert generate(small_synth) == generate(small_synth)
    other = SynthConfig(**{**small_synth.__dict__, "seed": small_synth.seed + 1})
    assert not np.array_equal(generate(other).features, generate(small_synth).features)


def test_noiseless_features_follow_the_generator():
    cfg = SynthConfig(group_sizes=(2, 2), n_categories=3, images_per_category=2, feature_dim=5, noise_std=0.0, seed=1)
    dataset = generate(cfg)
    M = generator_matrix(cfg, dataset.schema)
    assert np.allclose(dataset.features, dataset.categories @ M.T)


def test_nearest_centroid_separates_low_noise_categories():
    cfg = SynthConfig(group_sizes=(2, 5, 4, 2), n_categories=60, images_per_category=10, feature_dim=64,
                      noise_std=0.05, seed=1)
    dataset = generate(cfg)
    table = dataset.unique_categories()
    index = dataset.category_index(table)
    centroids = np.stack([dataset.features[index == c].mean(axis=0) for c in range(len(table))])
    gaps = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
    assert gaps[~np.eye(len(table), dtype=bool)].min() > 20 * cfg.noise_std
    distances = np.linalg.norm(dataset.features[:, None, :] - centroids[None, :, :], axis=2)
    assert (distances.argmin(axis=1) == index).all()


def test_group_saliency_scales_generator_columns():
    base = SynthConfig(group_sizes=(2, 3), n_categories=4, feature_dim=6, seed=2)
    boosted = SynthConfig(group_sizes=(2, 3), n_categories=4, feature_dim=6, seed=2, group_saliency=(10.0, 1.0))
    schema = AttributeSchema.from_sizes((2, 3))
    M, B = generator_matrix(base, schema), generator_matrix(boosted, schema)
    assert np.allclose(B[:, :2], 10.0 * M[:, :2])
    assert np.allclose(B[:, 2:], M[:, 2:])


def test_variable_images_per_category():
    cfg = SynthConfig(group_sizes=(2, 3), n_categories=5, images_per_category=(2, 4), seed=4)
    counts = generate(cfg).category_counts()
    assert counts.min() >= 2 and counts.max() <= 4


def test_label_flips_change_recorded_categories():
    clean = SynthConfig(group_sizes=(3, 3), n_categories=4, images_per_category=20, seed=5)
    noisy = SynthConfig(group_sizes=(3, 3), n_categories=4, images_per_category=20, seed=5, label_flip_rate=0.5)
    a, b = generate(clean), generate(noisy)
    changed = np.any(a.categories != b.categories, axis=1)
    assert 0 < changed.sum() < len(a)
    assert np.array_equal(a.features, b.features)


@pytest.mark.parametrize("kwargs", [
    {"n_categories": 13},
    {"images_per_category": 1},
    {"label_flip_rate": 1.0},
    {"unseen_fraction": 1.5},
    {"saliency": (1.0, 2.0)},
])
def test_synth_config_validation(kwargs):
    cfg = SynthConfig(**{"group_sizes": (2, 3, 2), "n_categories": 5, **kwargs})
    with pytest.raises(ConfigError):
        generate(cfg)


def test_split_holds_out_whole_categories(small_dataset):
    stats = small_dataset.stats().set_index("split")
    assert stats.loc["test_unseen", "n_categories"] == 3
    assert stats.loc["train", "n_categories"] == 9
    # one of six images of every seen category goes to test_seen
    assert stats.loc["test_seen", "n_samples"] == 9
    assert stats.loc["all", "n_samples"] == 72
    train = {row.tobytes() for row in small_dataset.subset(Split.TRAIN).categories}
    unseen = {row.tobytes() for row in small_dataset.subset(Split.TEST_UNSEEN).categories}
    seen = {row.tobytes() for row in small_dataset.subset(Split.TEST_SEEN).categories}
    assert not train & unseen
    assert seen <= train


def test_split_is_deterministic(small_synth):
    dataset = generate(small_synth)
    assert split(dataset, 0.25, 7) == split(dataset, 0.25, 7)


def test_pure_category_holdout(small_synth):
    tagged = split(generate(small_synth), 1.0, 0, test_fraction=0.25)
    stats = tagged.stats().set_index("split")
    assert stats.loc["test_seen", "n_categories"] == 0
    assert stats.loc["test_unseen", "n_categories"] == 3


def test_infeasible_split(small_synth):
    dataset = generate(small_synth)
    with pytest.raises(DataError):
        split(dataset, 1.0, 0, test_fraction=0.0)
    with pytest.raises(DataError):
        split(dataset, 0.999, 0)


def test_dataset_rejects_invalid_rows(gender_age_schema):
    with pytest.raises(DataError, match="slice has 2 bits"):
        Dataset(gender_age_schema, ["a"], np.zeros((1, 2)), [[1, 1, 0, 1]])
    with pytest.raises(DimensionError):
        Dataset(gender_age_schema, ["a", "b"], np.zeros((1, 2)), [[1, 0, 0, 1]])
    with pytest.raises(DataError, match="unique"):
        Dataset(gender_age_schema, ["a", "a"], np.zeros((2, 2)), [[1, 0, 0, 1], [1, 0, 0, 1]])


def test_dataset_is_read_only(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.features[0, 0] = 1.0


def test_leakage_check(gender_age_schema):
    dataset = Dataset(gender_age_schema, ["a", "b"], np.zeros((2, 2)), [[1, 0, 0, 1], [1, 0, 0, 1]],
                      splits=["train", "test_unseen"])
    with pytest.raises(DataError, match="also appear in train"):
        dataset.check_no_leakage()
