"""
Training objective for the joint embedding: angular-margin modality alignment,
the adaptive semantic margin regulariser with its learnable weighted Hamming
similarity, their weighted sum, and the attribute-classification loss used
for pretraining. Every loss returns its value together with analytic gradients.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from src.domain.model_state import HammingWeights, ModelState
from src.domain.network import GradientTape, Mlp
from src.domain.schema import PersonCategory, category_matrix, hamming_profile
from src.errors import ConfigError, DataError, DimensionError, NumericError

logger = logging.getLogger("Objective")

ARCCOS_EPSILON = 1e-7
UNIT_NORM_TOLERANCE = 1e-4


class Variant(str, enum.Enum):
    FULL = "full"
    NO_DELTA = "no_delta"
    UNIFORM_W = "uniform_w"
    L2NORM_W = "l2norm_w"


class PrototypeScope(str, enum.Enum):
    ALL = "all"
    BATCH = "batch"


@dataclass
class LossConfig:
    sigma: float = 32.0
    gamma: float = 0.1
    lam: float = 4.0
    variant: Variant = Variant.FULL
    use_asmr: bool = True
    prototype_scope: PrototypeScope = PrototypeScope.ALL

    def __post_init__(self):
        try:
            self.variant = Variant(self.variant)
            self.prototype_scope = PrototypeScope(self.prototype_scope)
        except ValueError as e:
            raise ConfigError(str(e))
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not 0 <= self.gamma <= math.pi / 4:
            raise ConfigError(f"gamma must lie in [0, pi/4], got {self.gamma}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @property
    def learns_hamming_weights(self) -> bool:
        """w is a trained parameter only where it shapes the regulariser; elsewhere it stays frozen."""
        return self.use_asmr and self.lam > 0 and self.variant in (Variant.FULL, Variant.L2NORM_W)


@dataclass
class Batch:
    """
    Mini-batch of image features with the index of each image's category in
    `category_table`, the deduplicated table of all training categories.
    """
    features: np.ndarray
    category_index: np.ndarray
    category_table: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.category_index = np.asarray(self.category_index, dtype=np.int64).reshape(-1)
        if isinstance(self.category_table, (list, tuple)):
            self.category_table = category_matrix(self.category_table)
        self.category_table = np.atleast_2d(np.asarray(self.category_table, dtype=np.float64))
        if self.features.shape[0] == 0:
            raise DataError("Empty batch")
        if self.features.shape[0] != self.category_index.shape[0]:
            raise DimensionError("One category index per image is required")
        n = self.category_table.shape[0]
        if self.category_index.min() < 0 or self.category_index.max() >= n:
            raise DataError(f"Category index out of range for a table of {n}")
        if np.unique(self.category_table, axis=0).shape[0] != n:
            raise DataError("Category table contains duplicates")


@dataclass
class LossBreakdown:
    total: float
    ma: float
    asmr: float


@dataclass
class AlignmentResult:
    value: float
    grad_features: np.ndarray
    grad_prototypes: np.ndarray


@dataclass
class RegularizerResult:
    value: float
    grad_embeddings: np.ndarray
    grad_weights: np.ndarray
    similarities: np.ndarray
    deltas: np.ndarray
    mu: float


@dataclass
class ClassificationResult:
    value: float
    group_losses: Dict[str, float]
    group_accuracy: Dict[str, float]
    head_tapes: Dict[str, GradientTape]
    grad_trunk: np.ndarray


def _weights(w: Union[HammingWeights, np.ndarray]) -> np.ndarray:
    w = w.w if isinstance(w, HammingWeights) else np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericError("Hamming weights must be finite")
    return w


def _rows(vectors) -> np.ndarray:
    if isinstance(vectors, (list, tuple)) and vectors and isinstance(vectors[0], PersonCategory):
        return category_matrix(vectors)
    return np.atleast_2d(np.asarray(vectors, dtype=np.float64))


def _check_unit(vectors: np.ndarray, label: str):
    deviation = np.abs(np.linalg.norm(vectors, axis=1) - 1.0)
    if deviation.size and deviation.max() > UNIT_NORM_TOLERANCE:
        raise NumericError(f"{label} must be unit norm (max deviation {deviation.max():.2e})")


def pair_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unordered pairs i < j in row-major order."""
    return np.triu_indices(n, k=1)


def delta(p_i, p_j, w) -> float:
    """Sigmoid(1 - sum_k w_k |p_i(k) - p_j(k)|)."""
    w = _weights(w)
    profile = hamming_profile(p_i, p_j)
    if profile.shape[0] != w.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for {profile.shape[0]} bits")
    return float(expit(1.0 - profile @ w))


def pairwise_deltas(P, w) -> np.ndarray:
    P, w = _rows(P), _weights(w)
    if P.shape[1] != w.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for {P.shape[1]} bits")
    i, j = pair_indices(P.shape[0])
    return expit(1.0 - np.abs(P[i] - P[j]) @ w)


def mu(G) -> float:
    """Mean cosine similarity over all unordered pairs."""
    G = _rows(G)
    if G.shape[0] < 2:
        raise DataError("mu needs at least 2 embeddings")
    _check_unit(G, "Prototype embeddings")
    i, j = pair_indices(G.shape[0])
    return float(np.mean(np.sum(G[i] * G[j], axis=1)))


def asmr_from_similarities(S, D) -> float:
    S = np.asarray(S, dtype=np.float64).reshape(-1)
    D = np.asarray(D, dtype=np.float64).reshape(-1)
    if S.shape != D.shape or S.size == 0:
        raise DimensionError(f"Similarity/delta size mismatch: {S.shape} vs {D.shape}")
    residual = S - S.mean() - D
    return float(np.mean(residual ** 2))


def effective_weights(w, variant: Variant = Variant.FULL, n_groups: Optional[int] = None) -> Optional[np.ndarray]:
    """
    Per-bit weights the variant's delta is computed with: the raw w, the
    frozen uniform value, w / ||w||, or None when the variant drops delta.
    """
    variant, w = Variant(variant), _weights(w)
    if variant == Variant.NO_DELTA:
        return None
    if variant == Variant.FULL:
        return w
    if variant == Variant.UNIFORM_W:
        if n_groups is None:
            raise ConfigError("The uniform_w variant needs the number of attribute groups")
        return np.full_like(w, HammingWeights.uniform_value(n_groups))
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise NumericError("Cannot l2-normalise all-zero Hamming weights")
    return w / norm


def asmr(G, P, w, variant: Variant = Variant.FULL, uniform_value: Optional[float] = None) -> RegularizerResult:
    """
    Mean over prototype pairs of (s_ij - mu - delta_ij)^2. mu is differentiated
    through, so the gradient w.r.t. s_ij is (2/K)(r_ij - mean(r)).
    """
    variant = Variant(variant)
    G, P, w = _rows(G), _rows(P), _weights(w)
    n = G.shape[0]
    if P.shape[0] != n:
        raise DimensionError(f"{n} embeddings but {P.shape[0]} categories")
    if n < 2:
        raise DataError("The regulariser needs at least 2 categories")
    if P.shape[1] != w.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for {P.shape[1]} bits")
    _check_unit(G, "Prototype embeddings")

    i, j = pair_indices(n)
    K = i.shape[0]
    s = np.sum(G[i] * G[j], axis=1)
    mean_s = float(s.mean())

    H = np.abs(P[i] - P[j])
    grad_w = np.zeros_like(w)
    if variant == Variant.UNIFORM_W and uniform_value is not None:
        u = np.full_like(w, uniform_value)
    else:
        u = effective_weights(w, variant, int(P[0].sum()))
    d = np.zeros(K) if u is None else expit(1.0 - H @ u)

    r = s - mean_s - d
    value = float(np.mean(r ** 2))

    ds = (2.0 / K) * (r - r.mean())
    C = np.zeros((n, n))
    C[i, j] = ds
    C = C + C.T
    grad_G = C @ G

    if variant in (Variant.FULL, Variant.L2NORM_W):
        grad_u = H.T @ ((2.0 / K) * r * d * (1.0 - d))
        if variant == Variant.FULL:
            grad_w = grad_u
        else:
            grad_w = (grad_u - u * (u @ grad_u)) / np.linalg.norm(w)

    return RegularizerResult(value, grad_G, grad_w, s, d, mean_s)


def ma_loss(F, assignment, G, sigma: float, gamma: float, epsilon: float = ARCCOS_EPSILON) -> AlignmentResult:
    """
    Angular-margin softmax of every image against all prototypes. The positive
    logit is sigma*cos(a + gamma), evaluated as c*cos(gamma) - sqrt(1 - clamp(c)^2)*sin(gamma);
    negatives use sigma*c.
    """
    F, G = _rows(F), _rows(G)
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if G.shape[0] == 0 or G.size == 0:
        raise DataError("Empty prototype set")
    if F.shape[0] != assignment.shape[0]:
        raise DimensionError("One prototype index per image is required")
    if F.shape[1] != G.shape[1]:
        raise DimensionError(f"Embedding dims differ: {F.shape[1]} vs {G.shape[1]}")
    if assignment.min() < 0 or assignment.max() >= G.shape[0]:
        raise DataError("Prototype index out of range")
    if sigma <= 0 or gamma < 0:
        raise ConfigError("sigma must be > 0 and gamma >= 0")
    _check_unit(F, "Image embeddings")
    _check_unit(G, "Prototype embeddings")

    m, n = F.shape[0], G.shape[0]
    if n == 1:
        return AlignmentResult(0.0, np.zeros_like(F), np.zeros_like(G))

    rows = np.arange(m)
    C = F @ G.T
    c_pos = C[rows, assignment]
    c_clip = np.clip(c_pos, -1.0 + epsilon, 1.0 - epsilon)
    sin_a = np.sqrt(1.0 - c_clip ** 2)
    cos_g, sin_g = math.cos(gamma), math.sin(gamma)

    logits = sigma * C
    logits[rows, assignment] = sigma * (c_pos * cos_g - sin_a * sin_g)
    lse = logsumexp(logits, axis=1)
    value = float(np.mean(lse - logits[rows, assignment]))

    d_logits = np.exp(logits - lse[:, None])
    d_logits[rows, assignment] -= 1.0
    d_logits /= m

    d_C = sigma * d_logits
    inside = (c_pos > -1.0 + epsilon) & (c_pos < 1.0 - epsilon)
    d_C[rows, assignment] = sigma * d_logits[rows, assignment] * (cos_g + inside * c_clip * sin_g / sin_a)

    return AlignmentResult(value, d_C @ G, d_C.T @ F)


def total_loss(state: ModelState, batch: Batch, cfg: LossConfig) -> Tuple[LossBreakdown, GradientTape]:
    """L_MA + lambda * R over the prototype set, with gradients for both encoders and w."""
    table, index = batch.category_table, batch.category_index
    if cfg.prototype_scope == PrototypeScope.BATCH:
        used = np.unique(index)
        table, index = table[used], np.searchsorted(used, index)

    F = state.image_encoder.forward(batch.features)
    G = state.category_encoder.forward(table)
    alignment = ma_loss(F, index, G, cfg.sigma, cfg.gamma)

    grad_G = alignment.grad_prototypes
    grad_w = np.zeros_like(state.hamming_weights.w)
    reg_value, total = float("nan"), alignment.value
    if cfg.use_asmr and table.shape[0] >= 2:
        reg = asmr(G, table, state.hamming_weights, cfg.variant)
        reg_value = reg.value
        total = alignment.value + cfg.lam * reg.value
        if cfg.lam > 0:
            grad_G = grad_G + cfg.lam * reg.grad_embeddings
            grad_w = cfg.lam * reg.grad_weights

    image_tape, _ = state.image_encoder.backward(batch.features, alignment.grad_features)
    category_tape, _ = state.category_encoder.backward(table, grad_G)
    tape = GradientTape()
    tape.merge(image_tape, "image.")
    tape.merge(category_tape, "category.")
    tape["hamming.w"] = grad_w
    return LossBreakdown(total, alignment.value, reg_value), tape


def cls_pretrain_loss(trunk_output: np.ndarray, heads: Mapping[str, Mlp], labels: np.ndarray) -> ClassificationResult:
    """Sum over attribute groups of the mean softmax cross-entropy of each group's head."""
    X = np.atleast_2d(np.asarray(trunk_output, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    m = X.shape[0]
    if labels.shape != (m, len(heads)):
        raise DimensionError(f"Expected labels of shape ({m}, {len(heads)}), got {labels.shape}")

    rows = np.arange(m)
    value, grad_trunk = 0.0, np.zeros_like(X)
    losses, accuracy, tapes = {}, {}, {}
    for g, (name, head) in enumerate(heads.items()):
        y = labels[:, g]
        if y.min() < 0 or y.max() >= head.out_dim:
            raise DataError(f"Label out of range for group '{name}' with {head.out_dim} attributes")
        logits = head.forward(X)
        lse = logsumexp(logits, axis=1)
        group_loss = float(np.mean(lse - logits[rows, y]))
        d_logits = np.exp(logits - lse[:, None])
        d_logits[rows, y] -= 1.0
        d_logits /= m
        tapes[name], d_X = head.backward(X, d_logits)
        grad_trunk += d_X
        losses[name] = group_loss
        accuracy[name] = float(np.mean(logits.argmax(axis=1) == y))
        value += group_loss
    return ClassificationResult(value, losses, accuracy, tapes, grad_trunk)


def classification_objective(state: ModelState, features: np.ndarray, labels: np.ndarray) -> Tuple[ClassificationResult, GradientTape]:
    """Pretraining loss through the heads and the image trunk (un-normalised output)."""
    if not state.pretrain_heads:
        raise ConfigError("State carries no pretraining heads")
    trunk = state.image_encoder.trunk(features)
    result = cls_pretrain_loss(trunk, state.pretrain_heads, labels)
    image_tape, _ = state.image_encoder.backward(features, result.grad_trunk, normalize=False)
    tape = GradientTape()
    tape.merge(image_tape, "image.")
    for name, head_tape in result.head_tapes.items():
        tape.merge(head_tape, f"heads.{name}.")
    return result, tape
