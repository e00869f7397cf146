"""Dense layers, dropout, and He-normal initialization.

Networks here are plain sequential stacks. Weight decay is decoupled from
the loss: ``apply_weight_decay`` adds ``2 * wd * W`` to each weight gradient
after backprop, and never touches biases.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor


def he_init(in_dim: int, out_dim: int, seed) -> Tensor:
    """He-normal weight tensor: entries i.i.d. N(0, 2/in_dim)."""
    if in_dim <= 0 or out_dim <= 0:
        raise ConfigError(f"layer dims must be positive, got {in_dim}x{out_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = np.sqrt(2.0 / in_dim)
    weights = rng.normal(0.0, std, size=(in_dim, out_dim))
    return Tensor(weights, requires_grad=True)


class Dense:
    """Fully-connected layer ``y = act(x W + b)`` with relu or linear activation."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 weight_decay: float = 0.0, seed=0):
        if activation not in ("relu", "linear"):
            raise ConfigError(f"unsupported activation {activation!r}")
        if weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight_decay = float(weight_decay)
        self.weights = he_init(in_dim, out_dim, seed)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        x = Tensor.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"dense layer expects (batch, {self.in_dim}), got {x.shape}")
        out = x @ self.weights + self.bias
        if self.activation == "relu":
            out = out.relu()
        return out

    def parameters(self) -> list:
        return [self.weights, self.bias]

    def named_parameters(self) -> list:
        return [("weights", self.weights), ("bias", self.bias)]

    def apply_weight_decay(self) -> None:
        if self.weight_decay == 0.0 or not self.weights.requires_grad:
            return
        if self.weights.grad is None:
            self.weights.grad = np.zeros_like(self.weights.data)
        self.weights.grad += 2.0 * self.weight_decay * self.weights.data


class Dropout:
    """Inverted dropout: identity in eval mode, E[output] = input in train mode."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = rng
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * Tensor(keep)

    def parameters(self) -> list:
        return []

    def named_parameters(self) -> list:
        return []

    def apply_weight_decay(self) -> None:
        pass


class Network:
    """Sequential stack of Dense/Dropout layers with a shared freeze flag."""

    def __init__(self, layers: list):
        self.layers = list(layers)
        self._frozen = False

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> list:
        return [(f"layer{i}.{name}", p)
                for i, layer in enumerate(self.layers)
                for name, p in layer.named_parameters()]

    @property
    def frozen(self) -> bool:
        return self._frozen

    def set_frozen(self, flag: bool) -> None:
        self._frozen = bool(flag)
        for p in self.parameters():
            p.requires_grad = not flag
            if flag:
                p.grad = None
        if flag:
            self.set_training(False)

    def set_training(self, flag: bool) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.training = flag

    def apply_weight_decay(self) -> None:
        if self._frozen:
            return
        for layer in self.layers:
            layer.apply_weight_decay()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
