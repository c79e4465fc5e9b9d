"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState) -> None:
    """Update the numpy arrays in ``params`` in place.

    Decay is applied to the weights directly (``p -= lr * wd * p``) before
    the bias-corrected moment update, never folded into the gradient.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeMismatch("one gradient per parameter required")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self) -> None:
        adam_step(
            [p.data for p in self.params],
            [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params],
            self.state,
        )
