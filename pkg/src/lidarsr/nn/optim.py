from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    """Bias-corrected Adam over nested ``{layer: {param: array}}`` dicts.

    ``decay`` is inverse-time decay per epoch: lr_e = lr / (1 + decay * e).
    """

    lr: float = 1e-4
    decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        return self.lr / (1.0 + self.decay * epoch)

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        """In-place update of every array in ``grads``."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for layer, g_layer in grads.items():
            for key, g in g_layer.items():
                k = (layer, key)
                if k not in self.m:
                    self.m[k] = np.zeros_like(g)
                    self.v[k] = np.zeros_like(g)
                m, v = self.m[k], self.v[k]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p = params[layer][key]
                p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
