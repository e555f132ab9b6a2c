"""AdamW with decoupled weight decay, plus the warm-restart cosine schedule."""

from __future__ import annotations

import math

import numpy as np


class GradientOverflow(RuntimeError):
    pass


class AdamW:
    """Decoupled weight decay (default 1e-4); wd=0 recovers plain Adam."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-4, lr_scales=None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.lr_scales = lr_scales or {}  # prefix -> relative lr multiplier
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def _scale_for(self, key):
        for prefix, scale in self.lr_scales.items():
            if key.startswith(prefix):
                return scale
        return 1.0

    def step(self, grads: dict, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = grads[k]
            if not np.all(np.isfinite(g)):
                raise GradientOverflow(f"gradient overflow in '{k}'")
            lr_k = lr * self._scale_for(k)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p *= 1.0 - lr_k * self.weight_decay
            p -= lr_k * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class WarmRestartSchedule:
    """Cosine annealing with warm restarts; cycle i spans t0 * tmult**i epochs."""

    def __init__(self, base_lr, min_lr=0.0, t0=10, tmult=2):
        if not base_lr > min_lr >= 0:
            raise ValueError("need base_lr > min_lr >= 0")
        if t0 < 1 or tmult < 1:
            raise ValueError("need t0 >= 1 and tmult >= 1")
        self.base_lr, self.min_lr = base_lr, min_lr
        self.t0, self.tmult = t0, tmult

    def lr_at(self, epoch: float) -> float:
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        t = float(epoch)
        period = float(self.t0)
        while t >= period:
            t -= period
            period *= self.tmult
        return self.min_lr + (self.base_lr - self.min_lr) * 0.5 * (1.0 + math.cos(math.pi * t / period))


def lr_at(schedule: WarmRestartSchedule, epoch: float) -> float:
    return schedule.lr_at(epoch)
