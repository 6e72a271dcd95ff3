from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, NumericError


@dataclass
class DenseLayer:
    """Affine map x -> W x + b with W of shape (out_dim, in_dim)."""
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"Inconsistent layer shapes: weight {self.weight.shape}, bias {self.bias.shape}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NumericError("Layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "DenseLayer":
        # Glorot-uniform weights, zero bias
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim))

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy())


@dataclass
class GradientTape:
    """Gradient buffers keyed by parameter name, same shapes as the parameters."""
    grads: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, parameters: Dict[str, np.ndarray]) -> "GradientTape":
        return cls({name: np.zeros_like(value) for name, value in parameters.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.grads[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def __iter__(self) -> Iterator[str]:
        return iter(self.grads)

    def items(self):
        return self.grads.items()

    def discard(self, name: str):
        """Drop a block so the optimiser leaves that parameter untouched."""
        self.grads.pop(name, None)

    def merge(self, other: "GradientTape", prefix: str = "") -> "GradientTape":
        """Accumulate `other` into this tape, renaming its blocks with `prefix`."""
        for name, grad in other.items():
            key = prefix + name
            if key in self.grads:
                self.grads[key] = self.grads[key] + grad
            else:
                self.grads[key] = grad.copy()
        return self

    def non_finite_blocks(self) -> List[str]:
        return [name for name, grad in self.grads.items() if not np.all(np.isfinite(grad))]


@dataclass
class ForwardCache:
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    norms: Optional[np.ndarray] = None


class Mlp:
    """
    Stack of dense layers with optional ReLU after each layer and an optional
    l2 normalisation of the output rows. Inputs are a single vector or a batch
    of row vectors.
    """

    def __init__(self, layers: Sequence[DenseLayer], relu_after: Optional[Sequence[bool]] = None,
                 normalize: bool = False):
        if not layers:
            raise DimensionError("An MLP needs at least one layer")
        for previous, layer in zip(layers, layers[1:]):
            if previous.out_dim != layer.in_dim:
                raise DimensionError(f"Layer chain broken: {previous.out_dim} -> {layer.in_dim}")
        self.layers = list(layers)
        if relu_after is None:
            relu_after = [True] * (len(layers) - 1) + [False]
        if len(relu_after) != len(layers):
            raise DimensionError("relu_after must have one flag per layer")
        self.relu_after = [bool(flag) for flag in relu_after]
        self.normalize = normalize

    @classmethod
    def initialize(cls, dims: Sequence[int], rng: np.random.Generator, normalize: bool = False,
                   relu_after: Optional[Sequence[bool]] = None) -> "Mlp":
        layers = [DenseLayer.initialize(d_in, d_out, rng) for d_in, d_out in zip(dims[:-1], dims[1:])]
        return cls(layers, relu_after=relu_after, normalize=normalize)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> List[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self, prefix: str = "") -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            params[f"{prefix}{i}.weight"] = layer.weight
            params[f"{prefix}{i}.bias"] = layer.bias
        return params

    def copy(self) -> "Mlp":
        return type(self)([layer.copy() for layer in self.layers], self.relu_after, self.normalize)

    def _as_batch(self, x) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x.reshape(1, -1) if single else x
        if batch.ndim != 2 or batch.shape[1] != self.in_dim:
            raise DimensionError(f"Input dimension {x.shape} does not match layer input {self.in_dim}")
        return batch, single

    def _run(self, batch: np.ndarray, normalize: bool) -> Tuple[np.ndarray, ForwardCache]:
        activations, pre_activations = [batch], []
        a = batch
        for layer, relu in zip(self.layers, self.relu_after):
            z = a @ layer.weight.T + layer.bias
            pre_activations.append(z)
            a = np.maximum(z, 0.0) if relu else z
            activations.append(a)
        cache = ForwardCache(activations, pre_activations)
        if not normalize:
            return a, cache
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise NumericError("Zero pre-normalisation vector: degenerate parameters")
        cache.norms = norms
        return a / norms, cache

    def forward(self, x) -> np.ndarray:
        batch, single = self._as_batch(x)
        out, _ = self._run(batch, self.normalize)
        return out[0] if single else out

    def trunk(self, x) -> np.ndarray:
        """Output before the l2 step (identical to forward when normalize is off)."""
        batch, single = self._as_batch(x)
        out, _ = self._run(batch, False)
        return out[0] if single else out

    def pre_activation_floor(self, x) -> float:
        """Smallest |pre-activation| feeding a ReLU; gradient checks avoid kinks with it."""
        batch, _ = self._as_batch(x)
        _, cache = self._run(batch, False)
        floors = [np.abs(z).min() for z, relu in zip(cache.pre_activations, self.relu_after) if relu]
        return float(min(floors)) if floors else float("inf")

    def backward(self, x, upstream, normalize: Optional[bool] = None) -> Tuple[GradientTape, np.ndarray]:
        """
        Gradients of <upstream, output(x)> (summed over batch rows) w.r.t. every
        parameter, plus the gradient w.r.t. the input. With normalisation on,
        the l2 Jacobian I/|z| - z z^T/|z|^3 is applied first.
        """
        normalize = self.normalize if normalize is None else normalize
        batch, single = self._as_batch(x)
        out, cache = self._run(batch, normalize)
        upstream = np.asarray(upstream, dtype=np.float64).reshape(out.shape) if single else np.asarray(upstream, dtype=np.float64)
        if upstream.shape != out.shape:
            raise DimensionError(f"Upstream shape {upstream.shape} does not match output {out.shape}")

        if normalize:
            d_a = (upstream - out * np.sum(upstream * out, axis=1, keepdims=True)) / cache.norms
        else:
            d_a = upstream

        tape = GradientTape()
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            d_z = d_a * (cache.pre_activations[i] > 0.0) if self.relu_after[i] else d_a
            tape[f"{i}.weight"] = d_z.T @ cache.activations[i]
            tape[f"{i}.bias"] = d_z.sum(axis=0)
            d_a = d_z @ layer.weight
        ordered = GradientTape({name: tape[name] for name in self.parameters()})
        return ordered, (d_a[0] if single else d_a)


class EncoderNet(Mlp):
    """Three dense layers, ReLU after the first two, l2-normalised output."""

    def __init__(self, layers: Sequence[DenseLayer], relu_after: Optional[Sequence[bool]] = None,
                 normalize: bool = True):
        super().__init__(layers, relu_after=relu_after, normalize=normalize)

    @classmethod
    def initialize(cls, dims: Sequence[int], rng: np.random.Generator, normalize: bool = True,
                   relu_after: Optional[Sequence[bool]] = None) -> "EncoderNet":
        layers = [DenseLayer.initialize(d_in, d_out, rng) for d_in, d_out in zip(dims[:-1], dims[1:])]
        return cls(layers, relu_after=relu_after, normalize=normalize)


def forward(net: Mlp, x) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, x, upstream) -> GradientTape:
    tape, _ = net.backward(x, upstream)
    return tape
