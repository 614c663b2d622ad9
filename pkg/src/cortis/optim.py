"""Adam with bias-corrected moments and a linear warmup/decay schedule."""
from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam over a flat parameter vector.

    Moments live with the instance; callers create a fresh instance whenever
    moment state must be reset (one per training run here).
    """

    def __init__(self, dim: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """Return updated parameters; does not mutate ``theta``."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def linear_warmup_decay(step: int, total_steps: int, peak_lr: float, warmup_steps: int) -> float:
    """Learning rate at 1-based ``step``: linear ramp to peak, then linear decay to 0."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    warmup_steps = max(0, min(warmup_steps, total_steps - 1))
    if warmup_steps and step <= warmup_steps:
        return peak_lr * step / warmup_steps
    span = total_steps - warmup_steps
    return peak_lr * (total_steps - step) / span if span > 0 else peak_lr
