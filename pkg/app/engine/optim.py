import math
from typing import Dict, Iterable, List, Optional

import numpy as np

from .autodiff import Parameter


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``"""
    params = list(params)
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return total


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class SGD:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-2):
        self.params: List[Parameter] = list(params)
        self.lr = lr

    def step(self, lr: float = None):
        lr = self.lr if lr is None else lr
        for p in self.params:
            p.value -= lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    """Adaptive moment estimation with bias correction.

    ``lr_scales`` maps parameter names to multipliers of the step size.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8,
                 lr_scales: Optional[Dict[str, float]] = None):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.scales = [float((lr_scales or {}).get(p.name, 1.0)) for p in self.params]
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for i, p in enumerate(self.params):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * p.grad
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * p.grad ** 2
            m_hat = self.m[i] / (1 - self.b1 ** self.t)
            v_hat = self.v[i] / (1 - self.b2 ** self.t)
            p.value -= lr * self.scales[i] * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
