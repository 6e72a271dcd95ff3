import json
import os

import pytest

from src.core.objective import Variant
from src.errors import ConfigError
from src.interface.run_config import PRESETS, RunConfig

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def test_defaults_round_trip_through_a_document():
    cfg = RunConfig()
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert again.config_hash() == cfg.config_hash()


def test_hash_is_short_hex_and_tracks_every_key():
    base = RunConfig()
    digest = base.config_hash()
    assert len(digest) == 12 and int(digest, 16) >= 0
    assert RunConfig().config_hash() == digest
    assert base.with_overrides(["loss.sigma=16"]).config_hash() != digest
    assert base.with_overrides(["eval.retrieve_k=3"]).config_hash() != digest


def test_overrides_parse_json_values():
    cfg = RunConfig().with_overrides([
        "train.epochs=3",
        "model.image_hidden=[8, 4]",
        "loss.use_asmr=false",
        "loss.variant=no_delta",
        "synth.schema_path=/tmp/schema.json",
    ])
    assert cfg.train.epochs == 3
    assert cfg.model.image_hidden == (8, 4)
    assert cfg.loss.use_asmr is False
    assert cfg.loss.variant is Variant.NO_DELTA
    assert cfg.synth.schema_path == "/tmp/schema.json"


def test_lambda_alias():
    assert RunConfig().with_overrides(["loss.lambda=0.5"]).loss.lam == 0.5
    assert RunConfig().with_value("loss.lambda", 2).loss.lam == 2


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets(name):
    cfg = RunConfig().with_preset(name)
    assert (cfg.loss.lam, cfg.loss.sigma, cfg.loss.gamma) == PRESETS[name]


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        RunConfig().with_preset("cuhk")


def test_top_level_seed_propagates():
    cfg = RunConfig.from_dict({"seed": 7})
    assert (cfg.seed, cfg.synth.seed, cfg.train.seed) == (7, 7, 7)
    pinned = RunConfig.from_dict({"seed": 7, "synth": {"seed": 2}})
    assert (pinned.synth.seed, pinned.train.seed) == (2, 7)
    overridden = RunConfig().with_overrides(["seed=9"])
    assert (overridden.seed, overridden.synth.seed, overridden.train.seed) == (9, 9, 9)
    reseeded = cfg.with_seed(3)
    assert (reseeded.seed, reseeded.synth.seed, reseeded.train.seed) == (3, 3, 3)
    assert cfg.seed == 7


@pytest.mark.parametrize("document", [
    {"optimizer": {}},
    {"train": {"learning_rate": 0.1}},
    {"train": []},
    {"eval": {"ks": [5, 1]}},
    {"eval": {"ks": [1, 1, 5]}},
    {"loss": {"sigma": 0}},
    {"loss": {"gamma": 1.0}},
    {"loss": {"variant": "squared"}},
    {"ablation": {"variants": ["full", "no_margin"]}},
    {"train": {"batch_size": 0}},
])
def test_invalid_documents(document):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(document)
    assert info.value.exit_code == 2


@pytest.mark.parametrize("assignment", ["train.epochs", "epochs=3", "train.momentun=0.5", "optim.lr=1"])
def test_invalid_overrides(assignment):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides([assignment])


def test_load_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 4, "loss": {"lam": 1.5}, "eval": {"ks": [1, 3]}}))
    cfg = RunConfig.load(str(path))
    assert cfg.loss.lam == 1.5 and cfg.eval.ks == (1, 3) and cfg.train.seed == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{seed: 1")
    with pytest.raises(ConfigError, match="not valid JSON"):
        RunConfig.load(str(bad))
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(str(tmp_path / "none.json"))


def test_shipped_configs_load():
    for name in ("benchmark.json", "saliency.json"):
        cfg = RunConfig.load(os.path.join(CONFIGS, name))
        assert cfg.synth.group_sizes == (2, 5, 4, 2)
        assert (cfg.synth.n_categories, cfg.synth.unseen_fraction) == (60, 0.3)
        assert cfg.ablation.seeds == (1, 2, 3, 4, 5)
    assert RunConfig.load(os.path.join(CONFIGS, "saliency.json")).synth.group_saliency == (10.0, 1.0, 1.0, 1.0)


def test_default_benchmark_is_feasible():
    synth = RunConfig().synth
    assert synth.group_sizes == (2, 5, 4, 2)
    assert synth.n_categories <= 2 * 5 * 4 * 2
