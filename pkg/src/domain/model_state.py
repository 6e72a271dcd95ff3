from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from src.domain.network import EncoderNet, Mlp
from src.domain.schema import AttributeSchema
from src.errors import ConfigError, DimensionError, NumericError

IMAGE_GROUP = "image"
CATEGORY_GROUP = "category"


@dataclass
class ModelConfig:
    """Encoder widths. The reference architecture feeds 2048-d pooled CNN features."""
    image_input_dim: Optional[int] = None
    image_hidden: Tuple[int, ...] = (512, 128)
    category_hidden: Tuple[int, ...] = (512, 128)
    embedding_dim: int = 128
    head_hidden: Tuple[int, ...] = (512, 256, 128)

    def __post_init__(self):
        self.image_hidden = tuple(int(d) for d in self.image_hidden)
        self.category_hidden = tuple(int(d) for d in self.category_hidden)
        self.head_hidden = tuple(int(d) for d in self.head_hidden)
        dims = list(self.image_hidden) + list(self.category_hidden) + list(self.head_hidden) + [self.embedding_dim]
        if any(d < 1 for d in dims):
            raise ConfigError("Layer widths must be positive")


@dataclass
class HammingWeights:
    """Per-bit weights w_k of the weighted Hamming distance."""
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.w)):
            raise NumericError("Hamming weights must be finite")

    @staticmethod
    def uniform_value(n_groups: int) -> float:
        # a pair differing in every group starts at Sigmoid(0)
        return 1.0 / (2.0 * n_groups)

    @classmethod
    def uniform(cls, schema: AttributeSchema) -> "HammingWeights":
        return cls(np.full(schema.d_pc, cls.uniform_value(schema.n_groups)))

    def __len__(self):
        return self.w.shape[0]


@dataclass
class ModelState:
    image_encoder: EncoderNet
    category_encoder: EncoderNet
    hamming_weights: HammingWeights
    pretrain_heads: Optional[Dict[str, Mlp]] = None
    seed: int = 0

    def __post_init__(self):
        if self.image_encoder.out_dim != self.category_encoder.out_dim:
            raise DimensionError(
                f"Encoders disagree on the joint space: {self.image_encoder.out_dim} vs {self.category_encoder.out_dim}")
        if len(self.hamming_weights) != self.category_encoder.in_dim:
            raise DimensionError(
                f"{len(self.hamming_weights)} Hamming weights for a {self.category_encoder.in_dim}-bit category")

    @classmethod
    def initialize(cls, config: ModelConfig, input_dim: int, schema: AttributeSchema, seed: int) -> "ModelState":
        if config.image_input_dim is not None and config.image_input_dim != input_dim:
            raise ConfigError(f"model.image_input_dim={config.image_input_dim} but features have {input_dim} dims")
        rng = np.random.default_rng(seed)
        image = EncoderNet.initialize([input_dim, *config.image_hidden, config.embedding_dim], rng)
        category = EncoderNet.initialize([schema.d_pc, *config.category_hidden, config.embedding_dim], rng)
        return cls(image, category, HammingWeights.uniform(schema), seed=seed)

    def with_heads(self, schema: AttributeSchema, head_hidden: Tuple[int, ...]) -> "ModelState":
        """Copy with one freshly initialised classifier stack per attribute group."""
        rng = np.random.default_rng([self.seed, 1])
        trunk_dim = self.image_encoder.out_dim
        heads = {g.name: Mlp.initialize([trunk_dim, *head_hidden, g.size], rng) for g in schema.groups}
        state = self.copy()
        state.pretrain_heads = heads
        return state

    def without_heads(self) -> "ModelState":
        state = self.copy()
        state.pretrain_heads = None
        return state

    def parameters(self) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        params.update(self.image_encoder.parameters("image."))
        params.update(self.category_encoder.parameters("category."))
        params["hamming.w"] = self.hamming_weights.w
        for group, head in (self.pretrain_heads or {}).items():
            params.update(head.parameters(f"heads.{group}."))
        return params

    def copy(self) -> "ModelState":
        heads = None
        if self.pretrain_heads is not None:
            heads = {name: head.copy() for name, head in self.pretrain_heads.items()}
        return ModelState(self.image_encoder.copy(), self.category_encoder.copy(),
                          HammingWeights(self.hamming_weights.w.copy()), heads, self.seed)

    def architecture(self) -> dict:
        return {
            "image": self.image_encoder.dims,
            "category": self.category_encoder.dims,
            "heads": {name: head.dims for name, head in (self.pretrain_heads or {}).items()},
        }


def parameter_group(name: str) -> str:
    """Learning-rate group of a parameter block; pretraining heads ride with the image side."""
    if name.startswith("image.") or name.startswith("heads."):
        return IMAGE_GROUP
    return CATEGORY_GROUP
