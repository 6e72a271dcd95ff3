import itertools
import os

import numpy as np
import pytest

from src.domain.schema import (
    AttributeSchema,
    PersonCategory,
    decode_category,
    encode_category,
    encode_query,
    hamming_profile,
)
from src.errors import DataError, DimensionError
from src.infrastructure.storage import load_schema

SCHEMA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "schemas")


def all_categories(schema):
    for picks in itertools.product(*(g.attributes for g in schema.groups)):
        yield encode_category(dict(zip(schema.group_names, picks)), schema)


def test_encode_concatenates_one_hot_groups(gender_age_schema):
    p = encode_category({"gender": "male", "age": "old"}, gender_age_schema)
    assert p.bits.tolist() == [1, 0, 0, 1]


def test_single_group_of_three():
    schema = AttributeSchema.from_dict({"groups": [{"name": "color", "attributes": ["red", "green", "blue"]}]})
    assert encode_category({"color": "green"}, schema).bits.tolist() == [0, 1, 0]


def test_decode_inverts_encode(gender_age_schema):
    p = PersonCategory([1, 0, 0, 1])
    assert decode_category(p, gender_age_schema) == {"gender": "male", "age": "old"}


@pytest.mark.parametrize("bits", [[0, 0, 0, 1], [1, 1, 0, 1]])
def test_decode_rejects_malformed_slices(gender_age_schema, bits):
    with pytest.raises(DataError, match="gender"):
        decode_category(PersonCategory(bits), gender_age_schema)


def test_round_trip_over_random_categories(toy_schema, rng):
    for _ in range(50):
        attrs = {g.name: g.attributes[rng.integers(g.size)] for g in toy_schema.groups}
        assert decode_category(encode_category(attrs, toy_schema), toy_schema) == attrs


@pytest.mark.parametrize("attrs, message", [
    ({"gender": "male", "height": "tall", "age": "old"}, "unknown group 'height'"),
    ({"gender": "robot", "age": "old"}, "unknown attribute 'robot'"),
    ({"gender": "male"}, "missing group 'age'"),
    ([("gender", "male"), ("gender", "female"), ("age", "old")], "more than once"),
])
def test_encode_errors(gender_age_schema, attrs, message):
    with pytest.raises(DataError, match=message):
        encode_category(attrs, gender_age_schema)


def test_schema_validation():
    with pytest.raises(DataError, match="at least 2"):
        AttributeSchema.from_dict({"groups": [{"name": "solo", "attributes": ["only"]}]})
    with pytest.raises(DataError, match="duplicate group"):
        AttributeSchema.from_dict({"groups": [
            {"name": "a", "attributes": ["x", "y"]}, {"name": "a", "attributes": ["x", "y"]}]})


def test_d_pc_is_sum_of_group_sizes(toy_schema):
    assert toy_schema.d_pc == 7
    assert toy_schema.group_slice(1) == slice(2, 5)


def test_hamming_profile_examples():
    p = PersonCategory([1, 0, 0, 1])
    assert hamming_profile(p, p).tolist() == [0, 0, 0, 0]
    assert hamming_profile([1, 0, 0, 1], [0, 1, 0, 1]).tolist() == [1, 1, 0, 0]


def test_hamming_profile_length_mismatch():
    with pytest.raises(DimensionError):
        hamming_profile([1, 0], [1, 0, 0, 1])


def test_hamming_profile_structure_over_all_pairs(toy_schema):
    categories = list(all_categories(toy_schema))
    for p, q in itertools.product(categories, repeat=2):
        profile = hamming_profile(p, q)
        assert profile.tolist() == hamming_profile(q, p).tolist()
        assert profile.sum() % 2 == 0
        assert (profile.sum() == 0) == (p == q)
        for i in range(toy_schema.n_groups):
            assert profile[toy_schema.group_slice(i)].sum() in (0, 2)


def test_query_blanks_are_zero_slices(toy_schema):
    q = encode_query({"gender": "female", "age": None}, toy_schema)
    assert q.bits.tolist() == [0, 1, 0, 0, 0, 0, 0]
    assert q.category_id == "01*****"
    assert decode_category(q, toy_schema, allow_blanks=True) == {"gender": "female", "age": None, "bag": None}


@pytest.mark.parametrize("name, groups, d_pc", [
    ("peta_reconstructed.json", 17, 105),
    ("market_reconstructed.json", 10, 30),
    ("pa100k_reconstructed.json", 13, 26),
    ("toy.json", 3, 7),
])
def test_shipped_schemas_reproduce_published_lengths(name, groups, d_pc):
    schema = load_schema(os.path.join(SCHEMA_DIR, name))
    assert schema.n_groups == groups
    assert schema.d_pc == d_pc


def test_peta_shaped_vector_length():
    schema = load_schema(os.path.join(SCHEMA_DIR, "peta_reconstructed.json"))
    attrs = {g.name: g.attributes[0] for g in schema.groups}
    p = encode_category(attrs, schema)
    assert p.d_pc == 105
    assert int(p.bits.sum()) == 17
