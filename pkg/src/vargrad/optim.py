"""Optimizers applied locally to the merged (already communicated) gradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DTYPE
from .errors import ConfigurationError

KINDS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    step_size: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halve_every: Optional[int] = None  # epochs; None keeps the step size constant

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"{self.kind!r} not in {KINDS}", "optimizer.kind")
        if not self.step_size > 0:
            raise ConfigurationError("must be > 0", "optimizer.step_size")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("must be in [0, 1)", "optimizer.momentum")
        if self.halve_every is not None and self.halve_every < 1:
            raise ConfigurationError("must be >= 1", "optimizer.halve_every")

    def step_size_at(self, epoch: int) -> float:
        if self.halve_every is None:
            return self.step_size
        return self.step_size * 0.5 ** (epoch // self.halve_every)


class SGD:
    def __init__(self, cfg: OptimizerConfig, n: int):
        self.cfg = cfg
        self.lr = DTYPE(cfg.step_size)

    def set_epoch(self, epoch):
        self.lr = DTYPE(self.cfg.step_size_at(epoch))

    def step(self, params, grad):
        params -= self.lr * grad


class MomentumSGD(SGD):
    """Heavy ball: ``buf = mu * buf + g``, ``x -= lr * buf``.

    Elements that were not sent arrive as zeros and only decay the buffer.
    """

    def __init__(self, cfg, n):
        super().__init__(cfg, n)
        self.mu = DTYPE(cfg.momentum)
        self.buf = np.zeros(n, DTYPE)

    def step(self, params, grad):
        self.buf *= self.mu
        self.buf += grad
        params -= self.lr * self.buf


class Adam(SGD):
    def __init__(self, cfg, n):
        super().__init__(cfg, n)
        self.m = np.zeros(n, DTYPE)
        self.v = np.zeros(n, DTYPE)
        self.t = 0

    def step(self, params, grad):
        c = self.cfg
        self.t += 1
        self.m *= DTYPE(c.beta1)
        self.m += DTYPE(1 - c.beta1) * grad
        self.v *= DTYPE(c.beta2)
        self.v += DTYPE(1 - c.beta2) * grad * grad
        m_hat = self.m / DTYPE(1 - c.beta1 ** self.t)
        v_hat = self.v / DTYPE(1 - c.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + DTYPE(c.eps))


def make_optimizer(cfg: OptimizerConfig, n: int):
    return {"sgd": SGD, "momentum": MomentumSGD, "adam": Adam}[cfg.kind](cfg, n)
