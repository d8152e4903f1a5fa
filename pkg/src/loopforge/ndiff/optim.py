"""AdamW with decoupled weight decay, plus cosine learning-rate annealing."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        """Apply one update; ``lr`` overrides the stored rate (for schedules)."""
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            # decoupled decay: shrink toward zero independent of the moments
            p.data = p.data - lr * update - lr * self.weight_decay * p.data


class CosineSchedule:
    def __init__(self, lr_max: float, lr_min: float, total_steps: int):
        if not (lr_max >= lr_min > 0.0):
            raise ValueError(f"cosine schedule needs lr_max >= lr_min > 0, got {lr_max}, {lr_min}")
        if total_steps < 1:
            raise ValueError("cosine schedule needs total_steps >= 1")
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.total_steps = total_steps

    def __call__(self, t: int) -> float:
        return cosine_lr(self, t)


def cosine_lr(sched: CosineSchedule, t: int) -> float:
    t = min(max(t, 0), sched.total_steps)
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + math.cos(math.pi * t / sched.total_steps))
