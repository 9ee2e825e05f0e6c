"""Adam with bias correction; complex parameters are updated as real/imag pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def _real_view(a: np.ndarray) -> np.ndarray:
    return a.view(a.real.dtype) if np.iscomplexobj(a) else a


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)
        self.state.m = [np.zeros_like(_real_view(p.data)) for p in self.params]
        self.state.v = [np.zeros_like(_real_view(p.data)) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.state, self.params, [p.grad for p in self.params])


def adam_step(state: AdamState, params: list[Tensor], grads: list) -> None:
    """One in-place Adam update.  A None gradient counts as zero."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        g = _real_view(np.array(g, dtype=p.data.dtype, order="C"))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        data = _real_view(p.data)
        data -= update.astype(data.dtype, copy=False)
