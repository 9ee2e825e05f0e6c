"""Tensor-level reverse-mode differentiation on top of numpy.

Complex tensors carry gradients in packed real-pair form: for a real loss L
and complex z = x + iy, ``z.grad = dL/dx + 1j * dL/dy``.  Every rule below
is written in that convention, so a complex computation differentiates
exactly like the equivalent computation on (real, imag) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """An array with an optional gradient slot and a link to the op that made it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.inexact):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> "Tape":
        tape = Tape.from_root(self)
        tape.replay(grad)
        return tape

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


@dataclass
class _Node:
    inputs: tuple
    vjp: Callable
    name: str


@dataclass
class Tape:
    """Primitive applications reachable from a root, in forward (topological) order."""

    root: Tensor
    order: list = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for inp in t._node.inputs:
                    if isinstance(inp, Tensor) and inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        return cls(root, order)

    @property
    def ops(self) -> list[str]:
        return [t._node.name for t in self.order if t._node is not None]

    def replay(self, grad=None) -> None:
        root = self.root
        if grad is None:
            if root.data.size != 1:
                raise ValueError("backward on a non-scalar tensor needs an explicit gradient")
            grad = np.ones_like(root.data)
        grads = {id(root): np.asarray(grad)}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, gi in zip(t._node.inputs, t._node.vjp(g)):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi


def backward(root: Tensor, grad=None) -> Tape:
    return root.backward(grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, inputs: Sequence, vjp: Callable, name: str) -> Tensor:
    out = Tensor(data)
    if any(isinstance(i, Tensor) and i.requires_grad for i in inputs):
        out.requires_grad = True
        out._node = _Node(tuple(inputs), vjp, name)
    return out


def _fit(g, x: Tensor):
    """Reduce a broadcast gradient to x's shape and drop the imaginary part for real x."""
    g = np.asarray(g)
    shape = x.data.shape
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if np.iscomplexobj(g) and not np.iscomplexobj(x.data):
        g = g.real
    return g.astype(x.data.dtype, copy=False)


def _needs(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_fit(g, a) if a.requires_grad else None,
                              _fit(g, b) if b.requires_grad else None), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_fit(g, a) if a.requires_grad else None,
                              _fit(-g, b) if b.requires_grad else None), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (_fit(g * np.conj(b.data), a) if a.requires_grad else None,
                _fit(g * np.conj(a.data), b) if b.requires_grad else None)

    return _record(a.data * b.data, (a, b), vjp, "mul")


def scale(x, c) -> Tensor:
    """Multiply by a constant (real or complex) scalar or array."""
    x = as_tensor(x)
    c = np.asarray(c)
    return _record(x.data * c, (x,), lambda g: (_fit(g * np.conj(c), x),), "scale")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (_fit(g * np.conj(out), x),), "exp")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record(np.maximum(x.data, 0), (x,), lambda g: (np.where(mask, g, 0),), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def wrap(x, period: float) -> Tensor:
    """x mod period; gradient passes straight through (piecewise identity)."""
    x = as_tensor(x)
    return _record(np.mod(x.data, period), (x,), lambda g: (g,), "wrap")


def conj(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.conj(x.data), (x,), lambda g: (np.conj(g),), "conj")


# ---------------------------------------------------------------------------
# shape and reductions


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        out = np.zeros_like(x.data, dtype=np.result_type(x.data, g))
        np.add.at(out, index, g)
        return (_fit(out, x),)

    return _record(x.data[index], (x,), vjp, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(_fit(p, t) for p, t in zip(np.split(g, sizes, axis=axis), ts))

    return _record(np.concatenate([t.data for t in ts], axis=axis), ts, vjp, "concat")


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.sum(x.data, axis=axis), (x,), vjp, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched (complex) matrix product; 1-D operands are not special-cased."""
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _fit(g @ np.conj(np.swapaxes(b.data, -1, -2)), a)
        if b.requires_grad:
            gb = _fit(np.conj(np.swapaxes(a.data, -1, -2)) @ g, b)
        return ga, gb

    return _record(a.data @ b.data, (a, b), vjp, "matmul")


complex_matmul = matmul


def linear_map(x, mat: np.ndarray, out_shape: tuple) -> Tensor:
    """Apply a fixed matrix to the flattened trailing block of x.

    x has shape (*batch, *in_shape) with prod(in_shape) == mat.shape[1];
    the result has shape (*batch, *out_shape).
    """
    x = as_tensor(x)
    n_in = mat.shape[1]
    batch = x.shape[: x.ndim - _trailing_ndim(x.shape, n_in)]
    flat = x.data.reshape(batch + (n_in,))
    out = (flat @ mat.T).reshape(batch + tuple(out_shape))

    def vjp(g):
        gf = g.reshape(batch + (mat.shape[0],)) @ np.conj(mat)
        return (_fit(gf.reshape(x.shape), x),)

    return _record(out, (x,), vjp, "linear_map")


def _trailing_ndim(shape, n):
    prod = 1
    for k in range(len(shape) - 1, -1, -1):
        prod *= shape[k]
        if prod == n:
            return len(shape) - k
    raise ValueError(f"no trailing block of {shape} has {n} elements")


def dense(x, weight, bias=None) -> Tensor:
    """Fully connected layer y = x W^T + b, with W shaped (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)

    return _record(out, inputs, vjp, "dense")


def conv1d(x, weight, bias=None) -> Tensor:
    """1-D cross-correlation, stride 1, zero padding to the input length.

    x: (batch, c_in, n); weight: (c_out, c_in, width) with odd width; bias: (c_out,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b, c_in, n = x.shape
    c_out, c_in_w, width = weight.shape
    if c_in_w != c_in:
        raise ValueError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    if width % 2 != 1:
        raise ValueError("conv1d needs an odd filter width for 'same' padding")
    pad = width // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # cols[b, i, c, k] = xp[b, c, i + k]
    cols = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2).transpose(0, 2, 1, 3)
    cols = cols.reshape(b, n, c_in * width)
    wmat = weight.data.reshape(c_out, c_in * width)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1))
    inputs = [x, weight] + ([bias] if bias is not None else [])

    def vjp(g):
        gt = g.transpose(0, 2, 1)  # (b, n, c_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * width)).reshape(weight.shape)
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(b, n, c_in, width)
            gxp = np.zeros((b, c_in, n + 2 * pad), dtype=g.dtype)
            for k in range(width):
                gxp[:, :, k:k + n] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, pad:pad + n]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    return _record(out, inputs, vjp, "conv1d")


def conv1d_last(x, weight, bias=None) -> Tensor:
    """Channels-last variant of conv1d: x is (batch, n, c_in), output (batch, n, c_out).

    Weights keep the (c_out, c_in, width) layout, so both variants compute the
    same map up to the axis order of their inputs and outputs.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b, n, c_in = x.shape
    c_out, c_in_w, width = weight.shape
    if c_in_w != c_in:
        raise ValueError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    if width % 2 != 1:
        raise ValueError("conv1d needs an odd filter width for 'same' padding")
    pad = width // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    # cols[b, i, k*c_in + c] = xp[b, i + k, c]
    cols = np.concatenate([xp[:, k:k + n, :] for k in range(width)], axis=2).reshape(b * n, width * c_in)
    wmat = weight.data.transpose(2, 1, 0).reshape(width * c_in, c_out)
    out = cols @ wmat
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
    inputs = [x, weight] + ([bias] if bias is not None else [])

    def vjp(g):
        g2 = g.reshape(b * n, c_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(width, c_in, c_out).transpose(2, 1, 0)
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(b, n, width, c_in)
            gxp = np.zeros((b, n + 2 * pad, c_in), dtype=g.dtype)
            for k in range(width):
                gxp[:, k:k + n, :] += gcols[:, :, k, :]
            gx = gxp[:, pad:pad + n, :]
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    return _record(out.reshape(b, n, c_out), inputs, vjp, "conv1d_last")


# ---------------------------------------------------------------------------
# losses


def frobenius_norm2(x, axes=None) -> Tensor:
    """Sum of squared magnitudes, over all elements or the given axes."""
    x = as_tensor(x)
    out = np.sum((x.data * np.conj(x.data)).real, axis=axes)

    def vjp(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (_fit(2.0 * g * x.data, x),)

    return _record(out, (x,), vjp, "frobenius_norm2")


def squared_error(a, b, axes=None) -> Tensor:
    """sum |a - b|^2 over all elements or the given axes."""
    a, b = as_tensor(a), as_tensor(b)
    diff = a.data - b.data
    out = np.sum((diff * np.conj(diff)).real, axis=axes)

    def vjp(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        gd = 2.0 * g * diff
        return (_fit(gd, a) if a.requires_grad else None,
                _fit(-gd, b) if b.requires_grad else None)

    return _record(out, (a, b), vjp, "squared_error")


# ---------------------------------------------------------------------------
# spectral primitives


def svd_soft_threshold(x, K: int, mu, clamp: float = 1e-8) -> Tensor:
    """Soft-threshold singular values at mu * sigma_{K+1}.

    For X = U diag(s) V^H the output is U diag(relu(s - mu * s[K])) V^H, with
    s sorted descending and s[K] the (K+1)-th largest value.  Works on stacks
    of matrices; mu may be a scalar Tensor (shared) or one value per matrix.

    The backward pass uses the standard SVD differential.  Pairs of singular
    values closer than ``clamp`` contribute nothing to the off-diagonal term.
    """
    x, mu = as_tensor(x), as_tensor(mu)
    m, n = x.shape[-2:]
    k = min(m, n)
    if K + 1 > k:
        raise ValueError(f"soft threshold needs K + 1 <= min(dims); got K={K}, dims={m}x{n}")
    try:
        U, s, Vh = np.linalg.svd(x.data, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise FloatingPointError(f"SVD did not converge: {exc}") from exc
    muv = mu.data
    if muv.ndim > 0:
        muv = muv.reshape(muv.shape + (1,))
    thr = muv * s[..., K:K + 1]
    active = s > thr
    gvals = np.where(active, s - thr, 0.0)
    out = (U * gvals[..., None, :]) @ Vh

    def vjp(G):
        V = np.conj(np.swapaxes(Vh, -1, -2))
        Uh = np.conj(np.swapaxes(U, -1, -2))
        UhGV = Uh @ G @ V
        # d/dg of Re<G, U diag(g) V^H>
        gg = np.real(np.diagonal(UhGV, axis1=-2, axis2=-1))
        gx = gmu = None
        if mu.requires_grad:
            gm = -np.sum(gg * active, axis=-1) * s[..., K]
            gmu = _fit(gm if mu.data.ndim > 0 else np.sum(gm), mu)
        if x.requires_grad:
            gs = gg * active
            mu_b = np.broadcast_to(muv, s[..., :1].shape)[..., 0]
            gs[..., K] -= np.sum(gs, axis=-1) * mu_b
            gU = G @ (V * gvals[..., None, :])
            gVh = (gvals[..., :, None] * Uh) @ G
            gx = _fit(_svd_vjp(U, s, Vh, gU, gs, gVh, clamp), x)
        return gx, gmu

    return _record(out, (x, mu), vjp, "svd_soft_threshold")


def _svd_vjp(U, s, Vh, gU, gs, gVh, clamp):
    """Gradient through a thin SVD (packed complex convention)."""
    m, n = U.shape[-2], Vh.shape[-1]
    k = s.shape[-1]
    Uh = np.conj(np.swapaxes(U, -1, -2))
    V = np.conj(np.swapaxes(Vh, -1, -2))

    def skew(a):
        return a - np.conj(np.swapaxes(a, -1, -2))

    UhgU = skew(Uh @ gU)
    VhgV = skew(Vh @ np.conj(np.swapaxes(gVh, -1, -2)))
    s2 = s * s
    E = s2[..., None, :] - s2[..., :, None]
    close = np.abs(s[..., None, :] - s[..., :, None]) < clamp
    invE = np.where(close, 0.0, 1.0 / np.where(close, 1.0, E))
    inner = (UhgU * s[..., None, :] + s[..., :, None] * VhgV) * invE
    idx = np.arange(k)
    inner[..., idx, idx] += gs
    safe_s = np.where(s > clamp, s, np.inf)
    if np.iscomplexobj(U):
        inner[..., idx, idx] += np.diagonal(UhgU, axis1=-2, axis2=-1) / (2.0 * safe_s)
    if m > k:
        gUSinv = gU / safe_s[..., None, :]
        ga = U @ inner + gUSinv - U @ (Uh @ gUSinv)
        return ga @ Vh
    if n > k:
        SinvgVh = gVh / safe_s[..., :, None]
        ga = inner @ Vh + SinvgVh - (SinvgVh @ V) @ Vh
        return U @ ga
    return U @ inner @ Vh


def piecewise_relu(x, d, delta: float, support: float | None = None) -> Tensor:
    """Evaluate sum_i d[i] * relu(x - i*delta), zeroed for x >= support.

    Fused form of the ReLU decoder's hidden and output layers.  Cost is
    linear in x.size + d.size; the result equals the explicit sum exactly
    up to floating-point summation order.
    """
    x, d = as_tensor(x), as_tensor(d)
    n_knots = d.shape[0]
    if support is None:
        support = n_knots * delta
    xv = x.data
    # number of knots strictly below x, minus one: relu'(0) = 0 convention
    j = np.ceil(xv / delta).astype(np.int64) - 1
    inside = (j >= 0) & (xv < support)
    j = np.clip(j, 0, n_knots - 1)
    knots = np.arange(n_knots) * delta
    slope = np.cumsum(d.data)
    icpt = np.cumsum(d.data * knots)
    out = np.where(inside, xv * slope[j] - icpt[j], 0.0)

    def vjp(g):
        gx = gd = None
        if x.requires_grad:
            gx = _fit(np.where(inside, g * slope[j], 0.0), x)
        if d.requires_grad:
            gi = np.where(inside, g, 0.0).ravel()
            jj = j.ravel()
            s0 = np.bincount(jj, weights=gi, minlength=n_knots)
            s1 = np.bincount(jj, weights=gi * xv.ravel(), minlength=n_knots)
            s0 = np.cumsum(s0[::-1])[::-1]
            s1 = np.cumsum(s1[::-1])[::-1]
            gd = _fit(s1 - knots * s0, d)
        return gx, gd

    return _record(out.astype(np.result_type(xv, d.data), copy=False), (x, d), vjp, "piecewise_relu")
