"""AdamW with decoupled weight decay, plus the inverse-sqrt LR schedule."""
from __future__ import annotations

import numpy as np

from .autodiff import Parameter

__all__ = ["AdamW", "lr_schedule"]


def lr_schedule(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to ``base_lr`` over ``warmup_steps``, then inverse
    square-root decay.  ``step`` counts from 1."""
    if step < 1:
        raise ValueError("step counts from 1")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * np.sqrt(warmup_steps / step)


class AdamW:
    """Adam with decoupled (multiplicative) weight decay.

    The decay ``p *= 1 - lr * wd`` is applied before the adaptive update,
    never folded into the gradient.  Frozen parameters are skipped
    entirely: no state is created and their values never change.
    """

    def __init__(self, params: list[Parameter], betas=(0.9, 0.98),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [p for p in params if not p.frozen]
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.frozen:  # freeze() may have been called after construction
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
