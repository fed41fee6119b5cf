from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class SGD:
    """Momentum SGD; weight decay is added to the gradient as an L2 term."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, buf in zip(self.params, self._buf):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            buf *= self.momentum
            buf += g
            p.data -= self.lr * buf

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        c1 = 1 - self.b1**self._t
        c2 = 1 - self.b2**self._t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (self.weight_decay * p.data + (m / c1) / (np.sqrt(v / c2) + self.eps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class MultiStepLR:
    """Multiply the optimizer's lr by ``gamma`` at each milestone epoch."""

    def __init__(self, optimizer, milestones: Sequence[int], gamma: float = 0.1):
        if list(milestones) != sorted(milestones):
            raise ValueError("milestones must be ascending")
        self.optimizer = optimizer
        self.base_lr = optimizer.lr
        self.milestones = list(milestones)
        self.gamma = gamma
        self.epoch = 0

    def step(self) -> None:
        self.epoch += 1
        passed = sum(1 for m in self.milestones if self.epoch >= m)
        self.optimizer.lr = self.base_lr * self.gamma**passed
