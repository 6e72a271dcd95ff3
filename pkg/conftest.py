import numpy as np
import pytest

from src.data.synthetic import SynthConfig, generate, split
from src.domain.model_state import ModelConfig, ModelState
from src.domain.schema import AttributeSchema


@pytest.fixture
def gender_age_schema():
    """gender={male,female}, age={young,old}: bit layout [male, female, young, old]."""
    return AttributeSchema.from_dict({"groups": [
        {"name": "gender", "attributes": ["male", "female"]},
        {"name": "age", "attributes": ["young", "old"]},
    ]})


@pytest.fixture
def toy_schema():
    return AttributeSchema.from_dict({"groups": [
        {"name": "gender", "attributes": ["male", "female"]},
        {"name": "age", "attributes": ["young", "adult", "old"]},
        {"name": "bag", "attributes": ["none", "backpack"]},
    ]})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_synth():
    return SynthConfig(group_sizes=(2, 3, 2), n_categories=12, images_per_category=6, feature_dim=10,
                       noise_std=0.3, unseen_fraction=0.25, test_fraction=0.2, seed=3)


@pytest.fixture
def small_dataset(small_synth):
    return split(generate(small_synth), small_synth.unseen_fraction, small_synth.seed, small_synth.test_fraction)


@pytest.fixture
def small_model():
    return ModelConfig(image_hidden=(16, 8), category_hidden=(16, 8), embedding_dim=6, head_hidden=(8,))


@pytest.fixture
def small_state(small_model, small_dataset):
    return ModelState.initialize(small_model, small_dataset.feature_dim, small_dataset.schema, seed=5)
