"""
Autoencoder module: MLP encoder/decoder pair around the quantizer.
Forward and backward passes are written out by hand over numpy arrays.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import DimensionMismatchError, DomainError

logger = logging.getLogger(__name__)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations recorded by a forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


@dataclass
class Mlp:
    """
    Stack of affine layers, ReLU between them, linear output.

    Weights are (fan_in, fan_out) and act on row vectors: ``y = x @ W + b``.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DomainError("an MLP needs one bias per weight matrix and at least one layer")
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatchError(f"layer {index}: weight {w.shape} and bias {b.shape} do not chain")
            if index and self.weights[index - 1].shape[1] != w.shape[0]:
                raise DimensionMismatchError(f"layer {index} input {w.shape[0]} != previous output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError(f"layer {index} holds non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def initialize(cls, widths: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform Glorot initialization, ``±sqrt(6 / (fan_in + fan_out))``, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        cache = ForwardCache(squeeze=x.ndim == 1)
        out = np.atleast_2d(x)
        if out.shape[1] != self.input_dim:
            raise DimensionMismatchError(f"input dimension {out.shape[1]} != {self.input_dim}")
        last = len(self.weights) - 1
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.inputs.append(out)
            pre = out @ w + b
            cache.pre_activations.append(pre)
            out = pre if index == last else np.maximum(pre, 0.0)
        return (out[0] if cache.squeeze else out), cache

    def backward(self, grad_out: np.ndarray, cache: Optional[ForwardCache]) -> Tuple[Dict[str, List[np.ndarray]], np.ndarray]:
        """
        Reverse-mode pass through the stack.

        Args:
            grad_out: Loss gradient at the output
            cache: Cache of the matching forward pass

        Returns:
            ({"weights": [...], "biases": [...]}, gradient at the input)
        """
        if cache is None or len(cache.inputs) != len(self.weights):
            raise DomainError("backward needs the cache of a forward pass through this MLP")
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        weight_grads: List[np.ndarray] = [None] * len(self.weights)
        bias_grads: List[np.ndarray] = [None] * len(self.weights)
        last = len(self.weights) - 1
        for index in range(last, -1, -1):
            if index != last:
                # ReLU subgradient at 0 is 0
                grad = grad * (cache.pre_activations[index] > 0.0)
            weight_grads[index] = cache.inputs[index].T @ grad
            bias_grads[index] = grad.sum(axis=0)
            grad = grad @ self.weights[index].T
        grad_in = grad[0] if cache.squeeze else grad
        return {"weights": weight_grads, "biases": bias_grads}, grad_in

    def to_dict(self) -> Dict[str, object]:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "Mlp":
        return cls(weights=payload["weights"], biases=payload["biases"])


@dataclass
class MlpParams:
    """Encoder m -> h1 -> h2 -> d and its mirrored decoder d -> h2 -> h1 -> m."""

    encoder: Mlp
    decoder: Mlp

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim or self.decoder.output_dim != self.encoder.input_dim:
            raise DimensionMismatchError("decoder does not mirror the encoder shapes")

    @classmethod
    def initialize(cls, input_dim: int, hidden_dims: Sequence[int], latent_dim: int, seed: int) -> "MlpParams":
        """
        Seeded initialization of both halves.

        Args:
            input_dim: Embedding dimension m
            hidden_dims: Encoder hidden widths (h1, h2)
            latent_dim: Latent dimension d
            seed: Generator seed
        """
        rng = np.random.default_rng(seed)
        widths = [input_dim, *hidden_dims, latent_dim]
        encoder = Mlp.initialize(widths, rng)
        decoder = Mlp.initialize(widths[::-1], rng)
        return cls(encoder=encoder, decoder=decoder)

    def named_parameters(self) -> List[Tuple[str, np.ndarray, bool]]:
        """(name, array, weight decay applies) for every trainable array."""
        named = []
        for part, mlp in (("encoder", self.encoder), ("decoder", self.decoder)):
            for index, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                named.append((f"mlp.{part}.w{index}", w, True))
                named.append((f"mlp.{part}.b{index}", b, False))
        return named

    def to_dict(self) -> Dict[str, object]:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "MlpParams":
        return cls(encoder=Mlp.from_dict(payload["encoder"]), decoder=Mlp.from_dict(payload["decoder"]))


def encode(z: np.ndarray, params: MlpParams) -> np.ndarray:
    """Project embeddings into the latent space."""
    h, _ = params.encoder.forward(z)
    return h


def decode(h_hat: np.ndarray, params: MlpParams) -> np.ndarray:
    """Map latent vectors back to the embedding space."""
    z_hat, _ = params.decoder.forward(h_hat)
    return z_hat


def recon_loss(z: np.ndarray, z_hat: np.ndarray) -> float:
    """Squared Euclidean distance; the mean over rows for a batch."""
    diff = np.asarray(z, dtype=np.float64) - np.asarray(z_hat, dtype=np.float64)
    if diff.ndim == 1:
        return float(np.sum(diff * diff))
    return float(np.mean(np.sum(diff * diff, axis=-1)))


def backward(grad_out: np.ndarray, cache: Optional[ForwardCache], mlp: Mlp) -> Tuple[Dict[str, List[np.ndarray]], np.ndarray]:
    """Parameter gradients and input gradient of one MLP half."""
    return mlp.backward(grad_out, cache)
