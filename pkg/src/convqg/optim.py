"""AdamW with decoupled weight decay.

Moments live in an AdamWState keyed like the parameter dict; the update
itself runs in the active kernel lane. With zero gradient and zero decay a
step is a no-op; with zero gradient and decay the step is p <- p(1 - lr*wd).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamWState:
    def __init__(self, params: dict[str, Tensor]):
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def sgd_adamw_step(params: dict[str, Tensor], lr: float, weight_decay: float,
                   state: AdamWState) -> None:
    """One AdamW step over every parameter; missing grads count as zero."""
    state.step += 1
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        kernels.adamw_update(
            p.data.reshape(-1),
            np.ascontiguousarray(g, dtype=p.data.dtype).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.step, lr, BETA1, BETA2, EPS, weight_decay,
        )
        p.grad = None
