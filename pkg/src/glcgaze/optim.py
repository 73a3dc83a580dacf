"""Decoupled-weight-decay adaptive-moment optimizer and its learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, pi

import numpy as np

from .errors import UsageError
from .tensor import Tensor


@dataclass
class AdamW:
    """Bias-corrected moment update with weight decay applied directly to weights.

    Update per parameter:
        m <- b1*m + (1-b1)*g         v <- b2*v + (1-b2)*g^2
        theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
    """

    params: list[tuple[str, Tensor]]
    lr: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if lr is not None:
            self.lr = lr
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params:
            if p.grad is None:
                raise UsageError(f"optimizer step with missing gradient for {name!r}")
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data -= self.lr * update


def cosine_warmup_lr(step: int, total_steps: int, base_lr: float, warmup_frac: float = 0.05) -> float:
    """Linear warmup over the first ``warmup_frac`` of steps, then cosine decay to 0."""
    warmup = max(1, int(round(total_steps * warmup_frac)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps <= warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + cos(pi * min(progress, 1.0)))
