"""Finite-difference gradient checking for functions built from Tensors."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], index: int,
                       step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar fn(*inputs) w.r.t. inputs[index].

    Complex inputs are perturbed along the real and imaginary axes separately
    and packed as d/dRe + 1j d/dIm.
    """
    base = [np.array(a, copy=True) for a in inputs]
    x = base[index]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    directions = [1.0, 1j] if np.iscomplexobj(x) else [1.0]

    def value():
        return float(np.real(fn(*[Tensor(a) for a in base]).data))

    for i in range(flat.size):
        orig = flat[i]
        for dirn in directions:
            flat[i] = orig + step * dirn
            fp = value()
            flat[i] = orig - step * dirn
            fm = value()
            flat[i] = orig
            gflat[i] += dirn * (fp - fm) / (2 * step)
    return grad


def analytic_gradient(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], index: int) -> np.ndarray:
    ts = [Tensor(np.array(a, copy=True), requires_grad=(i == index)) for i, a in enumerate(inputs)]
    out = fn(*ts)
    out.backward()
    g = ts[index].grad
    return np.zeros_like(ts[index].data) if g is None else g


def gradient_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], step: float = 1e-5,
                   indices: Sequence[int] | None = None) -> float:
    """Largest relative discrepancy max|analytic - numeric| / max|numeric| over the checked inputs."""
    worst = 0.0
    for i in (range(len(inputs)) if indices is None else indices):
        a = analytic_gradient(fn, inputs, i)
        n = numerical_gradient(fn, inputs, i, step)
        denom = max(np.max(np.abs(n)), 1e-30)
        worst = max(worst, float(np.max(np.abs(a - n)) / denom))
    return worst
