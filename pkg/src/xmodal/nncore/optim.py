"""Adam optimizer with a polynomial learning-rate decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass
class AdamConfig:
    lr0: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    total_steps: int = 1
    decay_power: float = 1.0
    end_lr: float = 0.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")


def lr_at(config: AdamConfig, step: int) -> float:
    """Polynomial decay: lr0 at step 0, end_lr at total_steps, clamped after."""
    frac = min(max(step, 0), config.total_steps) / config.total_steps
    return (config.lr0 - config.end_lr) * (1.0 - frac) ** config.decay_power + config.end_lr


class Adam:
    """Standard Adam with bias correction; frozen parameters are skipped."""

    def __init__(self, params: list, config: AdamConfig):
        self.params = list(params)
        self.config = config
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        cfg = self.config
        lr = lr_at(cfg, self.t)
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
