"""
Run configuration: one JSON document with a section per component, plus
command-line overrides (`--set section.key=value`), dataset-named presets
and a provenance hash.
"""
import copy
import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.core.objective import LossConfig
from src.core.optimizer import TrainConfig
from src.data.synthetic import SynthConfig
from src.domain.model_state import ModelConfig
from src.errors import ConfigError
from src.experiments.gradcheck_suite import GradCheckConfig

# (lambda, sigma, gamma)
PRESETS = {
    "peta": (4.0, 32.0, 0.1),
    "market": (6.0, 12.0, 0.2),
    "pa100k": (5.0, 48.0, 0.1),
}

KEY_ALIASES = {"loss.lambda": "loss.lam"}

ABLATION_VARIANTS = ("baseline", "baseline+pretrain", "full", "no_delta", "uniform_w", "l2norm_w")


@dataclass
class PathsConfig:
    data_dir: Optional[str] = None      # default: <out>/data
    schema: Optional[str] = None        # explicit files override data_dir
    samples: Optional[str] = None
    splits: Optional[str] = None
    checkpoints: Optional[str] = None   # default: <out>/checkpoints
    reports: Optional[str] = None       # default: <out>/reports


@dataclass
class EvalConfig:
    ks: Tuple[int, ...] = (1, 5, 10)
    retrieve_k: int = 10
    drop_singletons: bool = False

    def __post_init__(self):
        self.ks = tuple(int(k) for k in self.ks)
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("eval.ks must be a non-empty list of positive ranks")
        if list(self.ks) != sorted(set(self.ks)):
            raise ConfigError(f"eval.ks must be strictly ascending, got {list(self.ks)}")
        if self.retrieve_k < 1:
            raise ConfigError("eval.retrieve_k must be >= 1")


@dataclass
class AblationConfig:
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    variants: Tuple[str, ...] = ABLATION_VARIANTS
    sweep_key: Optional[str] = None
    sweep_values: List[Any] = field(default_factory=list)

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.variants = tuple(self.variants)
        unknown = [v for v in self.variants if v not in ABLATION_VARIANTS]
        if unknown:
            raise ConfigError(f"Unknown ablation variants {unknown}; choose from {list(ABLATION_VARIANTS)}")
        if not self.seeds:
            raise ConfigError("ablation.seeds must not be empty")


SECTIONS = {
    "paths": PathsConfig,
    "model": ModelConfig,
    "synth": SynthConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "eval": EvalConfig,
    "gradcheck": GradCheckConfig,
    "ablation": AblationConfig,
}


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(section: str, values: Dict[str, Any]):
    cls = SECTIONS[section]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"Unknown keys in section '{section}': {unknown}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value in section '{section}': {e}")


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradCheckConfig = field(default_factory=GradCheckConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "RunConfig":
        if not isinstance(document, dict):
            raise ConfigError("Run config must be a JSON object")
        unknown = sorted(set(document) - set(SECTIONS) - {"seed"})
        if unknown:
            raise ConfigError(f"Unknown config sections {unknown}")
        sections = {}
        for name in SECTIONS:
            values = document.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"Config section '{name}' must be an object")
            sections[name] = _build(name, values)
        config = cls(**sections)
        if "seed" in document:
            seed = document["seed"]
            config.seed = int(seed)
            # an explicit per-section seed wins over the top-level one
            if "seed" not in document.get("synth", {}):
                config.synth.seed = config.seed
            if "seed" not in document.get("train", {}):
                config.train.seed = config.seed
        return config

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON (line {e.lineno}): {e.msg}")
        return cls.from_dict(document)

    def to_dict(self) -> Dict[str, Any]:
        document = {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}
        document["seed"] = self.seed
        return document

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def with_overrides(self, assignments: Sequence[str]) -> "RunConfig":
        document = self.to_dict()
        for assignment in assignments:
            if "=" not in assignment:
                raise ConfigError(f"Override '{assignment}' is not of the form key=value")
            key, raw = assignment.split("=", 1)
            _assign(document, key.strip(), _parse_value(raw))
        return RunConfig.from_dict(document)

    def with_value(self, key: str, value: Any) -> "RunConfig":
        document = self.to_dict()
        _assign(document, key, value)
        return RunConfig.from_dict(document)

    def with_seed(self, seed: int) -> "RunConfig":
        config = copy.deepcopy(self)
        config.seed = int(seed)
        config.synth.seed = config.seed
        config.train.seed = config.seed
        return config

    def with_preset(self, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"Unknown preset '{name}'; choose from {sorted(PRESETS)}")
        lam, sigma, gamma = PRESETS[name]
        return self.with_value("loss.lam", lam).with_value("loss.sigma", sigma).with_value("loss.gamma", gamma)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _assign(document: Dict[str, Any], key: str, value: Any):
    key = KEY_ALIASES.get(key, key)
    if key == "seed":
        document["seed"] = value
        document["synth"]["seed"] = value
        document["train"]["seed"] = value
        return
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise ConfigError(f"Unknown config key '{key}'; use section.key with a section from {sorted(SECTIONS)}")
    if name not in {f.name for f in dataclasses.fields(SECTIONS[section])}:
        raise ConfigError(f"Unknown key '{name}' in section '{section}'")
    document[section][name] = value
