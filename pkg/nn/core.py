"""
Differentiable building blocks

Dense layers with hand-derived backward passes, parameter/gradient storage,
and the adaptive-moment / plain SGD optimizer used by the trainer.
All arithmetic is float64.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from errors import ConfigurationError, NonFiniteGradientError, UsageError
from models import OptimizerKind

logger = logging.getLogger(__name__)

DTYPE = np.float64


@dataclass
class ParameterBlock:
    """Named, shaped array of values with a gradient buffer of the same shape"""
    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    grads: np.ndarray

    @classmethod
    def zeros(cls, name: str, shape: tuple[int, ...]) -> "ParameterBlock":
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ConfigurationError(f"Block '{name}' has non-positive dimension in shape {shape}")
        return cls(name, shape, np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))

    @classmethod
    def uniform(cls, name: str, shape: tuple[int, ...], bound: float, rng: np.random.Generator) -> "ParameterBlock":
        block = cls.zeros(name, shape)
        block.values[...] = rng.uniform(-bound, bound, size=block.shape)
        return block

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def zero_grad(self) -> None:
        self.grads.fill(0.0)


def parameter_count(blocks: Iterable[ParameterBlock]) -> int:
    return sum(block.size for block in blocks)


def zero_grads(blocks: Iterable[ParameterBlock]) -> None:
    for block in blocks:
        block.zero_grad()


def copy_values(source: Iterable[ParameterBlock], target: Iterable[ParameterBlock]) -> None:
    """Bitwise copy of values between two block lists with matching shapes"""
    source, target = list(source), list(target)
    if len(source) != len(target):
        raise ConfigurationError(f"Cannot copy {len(source)} blocks into {len(target)} blocks")
    for src, dst in zip(source, target):
        if src.shape != dst.shape:
            raise ConfigurationError(f"Shape mismatch copying '{src.name}' {src.shape} into '{dst.name}' {dst.shape}")
        np.copyto(dst.values, src.values)


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"


@dataclass
class DenseCache:
    """Forward record needed by dense_backward"""
    x: np.ndarray
    pre: np.ndarray


@dataclass
class DenseLayer:
    """y = act(W x + b) applied over the last axis of x"""
    weight: ParameterBlock
    bias: ParameterBlock
    activation: Activation = Activation.IDENTITY

    @classmethod
    def create(
        cls,
        name: str,
        in_features: int,
        out_features: int,
        activation: Activation,
        rng: np.random.Generator,
    ) -> "DenseLayer":
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weight and bias"""
        bound = 1.0 / math.sqrt(in_features)
        weight = ParameterBlock.uniform(f"{name}.weight", (out_features, in_features), bound, rng)
        bias = ParameterBlock.uniform(f"{name}.bias", (out_features,), bound, rng)
        return cls(weight, bias, activation)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[ParameterBlock]:
        return [self.weight, self.bias]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
    """
    Forward pass of a dense layer.

    Args:
        layer: Layer to apply
        x: Array whose last axis has length layer.in_features; leading axes are batch axes

    Returns:
        (y, cache) where y has last axis layer.out_features
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 0 or x.shape[-1] != layer.in_features:
        raise ConfigurationError(
            f"Layer '{layer.weight.name}' expects input length {layer.in_features}, got shape {x.shape}"
        )
    pre = x @ layer.weight.values.T + layer.bias.values
    if layer.activation is Activation.RELU:
        y = np.maximum(pre, 0.0)
    else:
        y = pre
    return y, DenseCache(x=x, pre=pre)


def dense_backward(layer: DenseLayer, cache: Optional[DenseCache], dy: np.ndarray) -> np.ndarray:
    """
    Backward pass of a dense layer.

    Accumulates dL/dW and dL/db into the layer's gradient buffers,
    summing over every leading batch axis, and returns dL/dx.
    """
    if cache is None:
        raise UsageError(f"dense_backward on '{layer.weight.name}' called without a forward cache")
    dy = np.asarray(dy, dtype=DTYPE)
    if dy.shape != cache.pre.shape:
        raise ConfigurationError(
            f"Layer '{layer.weight.name}' cotangent shape {dy.shape} does not match output shape {cache.pre.shape}"
        )
    if layer.activation is Activation.RELU:
        dpre = dy * (cache.pre > 0.0)
    else:
        dpre = dy
    flat_dpre = dpre.reshape(-1, layer.out_features)
    flat_x = cache.x.reshape(-1, layer.in_features)
    layer.weight.grads += flat_dpre.T @ flat_x
    layer.bias.grads += flat_dpre.sum(axis=0)
    return dpre @ layer.weight.values


@dataclass
class MlpCache:
    layers: list[DenseCache]


@dataclass
class Mlp:
    """Stack of relu dense layers followed by a linear output layer"""
    layers: list[DenseLayer] = field(default_factory=list)

    @classmethod
    def create(
        cls,
        name: str,
        in_features: int,
        hidden: list[int],
        out_features: int,
        rng: np.random.Generator,
    ) -> "Mlp":
        widths = [in_features, *hidden, out_features]
        layers = []
        for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            activation = Activation.RELU if index < len(widths) - 2 else Activation.IDENTITY
            layers.append(DenseLayer.create(f"{name}.{index}", fan_in, fan_out, activation, rng))
        return cls(layers)

    @staticmethod
    def expected_parameter_count(in_features: int, hidden: list[int], out_features: int) -> int:
        widths = [in_features, *hidden, out_features]
        return sum(fan_out * (fan_in + 1) for fan_in, fan_out in zip(widths[:-1], widths[1:]))

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def parameters(self) -> list[ParameterBlock]:
        return [block for layer in self.layers for block in layer.parameters()]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        caches = []
        for layer in self.layers:
            x, cache = dense_forward(layer, x)
            caches.append(cache)
        return x, MlpCache(caches)

    def backward(self, cache: Optional[MlpCache], dy: np.ndarray) -> np.ndarray:
        if cache is None:
            raise UsageError("Mlp.backward called without a forward cache")
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache.layers)):
            dy = dense_backward(layer, layer_cache, dy)
        return dy


@dataclass
class OptimizerState:
    """
    Moments and step counter for one parameter group.

    Moment arrays are created lazily on the first Adam update of a block;
    SGD never allocates them.
    """
    learning_rate: float
    kind: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def moments(self, block: ParameterBlock) -> tuple[np.ndarray, np.ndarray]:
        zeros = np.zeros(block.shape, dtype=DTYPE)
        return self.first_moment.get(block.name, zeros), self.second_moment.get(block.name, zeros)


def optimizer_step(state: OptimizerState, params: Iterable[ParameterBlock]) -> None:
    """
    Apply one update to every block, then zero the gradients.

    All-or-nothing: raises NonFiniteGradientError, leaving values, moments
    and the step counter untouched, when a gradient holds NaN or Inf or
    when any updated value would overflow.
    """
    params = list(params)
    for block in params:
        bad = int(np.count_nonzero(~np.isfinite(block.grads)))
        if bad:
            logger.error(f"Aborting update {state.step + 1}: {bad} non-finite gradients in '{block.name}'")
            raise NonFiniteGradientError(block.name, bad)

    step = state.step + 1
    candidates: dict[str, np.ndarray] = {}
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    with np.errstate(over="ignore", invalid="ignore"):
        if state.kind is OptimizerKind.SGD:
            for block in params:
                candidates[block.name] = block.values - state.learning_rate * block.grads
        else:
            correction1 = 1.0 - state.beta1 ** step
            correction2 = 1.0 - state.beta2 ** step
            for block in params:
                m, v = state.moments(block)
                m = state.beta1 * m + (1.0 - state.beta1) * block.grads
                v = state.beta2 * v + (1.0 - state.beta2) * np.square(block.grads)
                m_hat = m / correction1
                v_hat = v / correction2
                candidates[block.name] = block.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
                moments[block.name] = (m, v)

    for block in params:
        bad = int(np.count_nonzero(~np.isfinite(candidates[block.name])))
        if bad:
            logger.error(f"Aborting update {step}: '{block.name}' would hold {bad} non-finite values")
            raise NonFiniteGradientError(block.name, bad, stage="updated value")

    state.step = step
    for block in params:
        block.values[...] = candidates[block.name]
        if block.name in moments:
            state.first_moment[block.name], state.second_moment[block.name] = moments[block.name]
        block.zero_grad()
