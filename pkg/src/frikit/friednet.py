"""Encoder-decoder network: a convolutional encoder predicts Dirac locations and a
ReLU decoder resynthesizes the samples from them.

The decoder models the kernel as a sum of ramps d_i max(0, t - i delta) and
can be frozen (known kernel) or learned from noisy data (unknown kernel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, PiecewiseLinear, eval_piecewise, piecewise_from_kernel
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.optim import Adam


class DegenerateKernelError(ArithmeticError):
    pass


class DivergenceError(FloatingPointError):
    pass


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# encoder


@dataclass
class Encoder:
    """Three same-padded conv layers, flatten, then dense layers of width 100, 100 and K."""

    conv: list  # [(weight, bias)] * 3
    fc: list  # [(weight, bias)] * 3

    @classmethod
    def create(cls, N: int, K: int, rng: np.random.Generator, filters: int = 100, width: int = 3,
               hidden: int = 100, dtype=np.float64) -> "Encoder":
        conv = []
        c_in = 1
        for _ in range(3):
            bound = 1 / math.sqrt(c_in * width)
            conv.append((Tensor(_uniform(rng, (filters, c_in, width), bound, dtype), requires_grad=True),
                         Tensor(_uniform(rng, (filters,), bound, dtype), requires_grad=True)))
            c_in = filters
        fc = []
        for n_in, n_out in ((filters * N, hidden), (hidden, hidden), (hidden, K)):
            bound = 1 / math.sqrt(n_in)
            fc.append((Tensor(_uniform(rng, (n_out, n_in), bound, dtype), requires_grad=True),
                       Tensor(_uniform(rng, (n_out,), bound, dtype), requires_grad=True)))
        return cls(conv, fc)

    def params(self) -> list[Tensor]:
        return [p for pair in self.conv + self.fc for p in pair]

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(self.conv):
            out[f"enc.conv{i}.weight"], out[f"enc.conv{i}.bias"] = w.data, b.data
        for i, (w, b) in enumerate(self.fc):
            out[f"enc.fc{i}.weight"], out[f"enc.fc{i}.bias"] = w.data, b.data
        return out

    def load_params(self, arrays: dict) -> None:
        for i, (w, b) in enumerate(self.conv):
            w.data = arrays[f"enc.conv{i}.weight"].astype(w.dtype)
            b.data = arrays[f"enc.conv{i}.bias"].astype(b.dtype)
        for i, (w, b) in enumerate(self.fc):
            w.data = arrays[f"enc.fc{i}.weight"].astype(w.dtype)
            b.data = arrays[f"enc.fc{i}.bias"].astype(b.dtype)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params())

    @property
    def dtype(self):
        return self.conv[0][0].dtype

    def forward(self, y) -> Tensor:
        """(batch, N) samples -> (batch, K) locations."""
        x = ad.as_tensor(y) if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=self.dtype))
        # channels-last internally; the flatten order is position-major
        h = ad.reshape(x, (x.shape[0], x.shape[1], 1))
        for w, b in self.conv:
            h = ad.relu(ad.conv1d_last(h, w, b))
        h = ad.reshape(h, (h.shape[0], -1))
        for i, (w, b) in enumerate(self.fc):
            h = ad.dense(h, w, b)
            if i < len(self.fc) - 1:
                h = ad.relu(h)
        return h

    def predict(self, y: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        y = np.asarray(y, dtype=self.dtype)
        if y.ndim == 1:
            return self.forward(y[None])[0].data
        return np.concatenate([self.forward(y[i:i + batch_size]).data for i in range(0, y.shape[0], batch_size)])


# ---------------------------------------------------------------------------
# decoder


@dataclass
class Decoder:
    """Resynthesizes samples y[n] = sum_k a_k phi(t_k / T - n + offset) with a ramp-sum kernel.

    With ``periodic`` set, the argument is wrapped modulo N so the model
    matches periodic sampling of a stream; otherwise kernel values beyond the
    support are zero.
    """

    d: Tensor
    delta: float
    T: float
    offset: float = 0.0
    periodic: bool = True

    @property
    def n_knots(self) -> int:
        return self.d.shape[0]

    @property
    def support(self) -> float:
        return self.n_knots * self.delta

    @classmethod
    def fixed(cls, kernel: Kernel, delta: float, T: float, dtype=np.float64, **kw) -> "Decoder":
        pl = piecewise_from_kernel(kernel, delta)
        return cls(Tensor(pl.coefficients.astype(dtype)), delta, T, **kw)

    @classmethod
    def learnable(cls, support: float, delta: float, T: float, rng: np.random.Generator, dtype=np.float64,
                  init_range: float = 0.01, **kw) -> "Decoder":
        n = support / delta
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"step {delta} does not divide support {support}")
        d = rng.uniform(-init_range, init_range, size=int(round(n))).astype(dtype)
        return cls(Tensor(d, requires_grad=True), delta, T, **kw)

    def kernel(self) -> PiecewiseLinear:
        return PiecewiseLinear(tuple(np.asarray(self.d.data, dtype=np.float64)), self.delta)

    def arguments(self, t_hat, N: int) -> Tensor:
        t_hat = ad.as_tensor(t_hat)
        n = np.arange(N, dtype=t_hat.dtype)[:, None] - self.offset
        x = ad.scale(ad.reshape(t_hat, (t_hat.shape[0], 1, t_hat.shape[1])), 1.0 / self.T) - n
        return ad.wrap(x, N) if self.periodic else x

    def basis(self, t_hat, N: int) -> Tensor:
        """(batch, N, K) kernel values phi(x_{n,k})."""
        return ad.piecewise_relu(self.arguments(t_hat, N), self.d, self.delta, self.support)

    def forward(self, t_hat, a_hat, N: int) -> Tensor:
        G = self.basis(t_hat, N)
        a = ad.as_tensor(a_hat)
        return ad.tsum(ad.mul(G, ad.reshape(a, (a.shape[0], 1, a.shape[1]))), axis=2)

    def forward_layers(self, t_hat, a_hat, N: int) -> Tensor:
        """Same output built from explicit layers: shift, ramp bank with ReLU, weighted sums."""
        x = self.arguments(t_hat, N)  # (B, N, K): t/T - n, wrapped when periodic
        knots = self.delta * np.arange(self.n_knots, dtype=x.dtype)
        B, n_s, K = x.shape
        ramps = ad.relu(ad.reshape(x, (B, n_s, K, 1)) - knots)  # (B, N, K, I)
        mask = (x.data < self.support)[..., None]
        ramps = ad.mul(ramps, mask.astype(x.dtype))
        G = ad.reshape(ad.matmul(ramps, ad.reshape(self.d, (self.n_knots, 1))), (B, n_s, K))
        a = ad.as_tensor(a_hat)
        return ad.tsum(ad.mul(G, ad.reshape(a, (a.shape[0], 1, a.shape[1]))), axis=2)

    def basis_numpy(self, t_hat: np.ndarray, N: int) -> np.ndarray:
        x = np.asarray(t_hat, dtype=np.float64)[:, None, :] / self.T - (np.arange(N)[:, None] - self.offset)
        if self.periodic:
            x = np.mod(x, N)
        return eval_piecewise(self.d.data.astype(np.float64), self.delta, x, self.support)

    def ls_amplitudes(self, t_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-row least-squares amplitudes for the current kernel, (batch, K)."""
        G = self.basis_numpy(t_hat, y.shape[-1])
        return batched_lstsq(G, np.asarray(y, dtype=np.float64))

    def normalize(self) -> float:
        """Rescale d so the kernel's dominant extremum becomes +1; returns the divisor."""
        d = self.d.data.astype(np.float64)
        vals = eval_piecewise(d, self.delta, self.delta * np.arange(self.n_knots + 1), None)
        vmax, vmin = float(vals.max()), float(vals.min())
        div = vmax if abs(vmax) >= abs(vmin) else vmin
        if div == 0.0 or not math.isfinite(div):
            raise DegenerateKernelError("decoder kernel is identically zero")
        self.d.data = (d / div).astype(self.d.dtype)
        return div


def normalize_coefficients(d: np.ndarray, delta: float) -> np.ndarray:
    dec = Decoder(Tensor(np.asarray(d, dtype=np.float64)), delta, 1.0)
    dec.normalize()
    return dec.d.data


def batched_lstsq(G: np.ndarray, y: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least squares for a stack of small systems G[b] a = y[b]."""
    U, s, Vh = np.linalg.svd(G, full_matrices=False)
    smax = s[..., :1]
    inv = np.where(s > rcond * np.maximum(smax, 1e-300), 1.0 / np.where(s > 0, s, 1.0), 0.0)
    Uty = np.einsum("bnk,bn->bk", U, y)
    return np.einsum("bkj,bk->bj", Vh, inv * Uty)


# ---------------------------------------------------------------------------
# loss


def friednet_loss(y_hat, y_target, t_hat, t_true, gamma: float) -> Tensor:
    """Batch mean of sum_n (y_hat - y)^2 + gamma sum_k (t_hat - t)^2."""
    t_hat = ad.as_tensor(t_hat)
    B = t_hat.shape[0]
    loss = ad.squared_error(t_hat, np.asarray(t_true, dtype=t_hat.dtype))
    loss = ad.scale(loss, gamma)
    if y_hat is not None:
        y_hat = ad.as_tensor(y_hat)
        loss = ad.squared_error(y_hat, np.asarray(y_target, dtype=y_hat.dtype)) + loss
    return ad.scale(loss, 1.0 / B)


def location_loss(t_hat, t_true) -> Tensor:
    t_hat = ad.as_tensor(t_hat)
    return ad.scale(ad.squared_error(t_hat, np.asarray(t_true, dtype=t_hat.dtype)), 1.0 / t_hat.shape[0])


# ---------------------------------------------------------------------------
# training


@dataclass
class FriedTrainConfig:
    gamma: float = 1.0
    lr_encoder: float = 1e-4
    lr_decoder: float = 1e-5
    batch_size: int = 64
    direct_epochs: int = 300
    decoder_epochs: int = 150
    joint_epochs: int = 150
    seed: int = 0
    amplitudes: str = "true"  # "true" or "ls"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.amplitudes not in ("true", "ls"):
            raise ValueError("amplitudes must be 'true' or 'ls'")


@dataclass
class TrainData:
    """Training pairs: inputs (n, N), location labels (n, K), sample targets (n, N), amplitudes (n, K)."""

    inputs: np.ndarray
    locations: np.ndarray
    targets: np.ndarray
    amplitudes: np.ndarray | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TrainLog:
    stages: dict = field(default_factory=dict)

    def add(self, stage: str, epoch: int, loss: float) -> None:
        self.stages.setdefault(stage, []).append((epoch, loss))

    def rows(self):
        for stage, items in self.stages.items():
            for epoch, loss in items:
                yield stage, epoch, loss


def _check(value: float, stage: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{stage}: loss became {value} at epoch {epoch}")
    return value


def _epochs(data: TrainData, epochs: int, batch_size: int, rng: np.random.Generator, step, stage: str,
            log: TrainLog | None, on_epoch=None):
    n = len(data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            total += _check(step(idx), stage, epoch) * idx.size
        if on_epoch is not None:
            on_epoch()
        if log is not None:
            log.add(stage, epoch, total / n)


def train_direct(enc: Encoder, data: TrainData, epochs: int, lr: float, batch_size: int,
                 rng: np.random.Generator, log: TrainLog | None = None) -> None:
    """Encoder alone, trained on the location error."""
    opt = Adam(enc.params(), lr)
    x = data.inputs.astype(enc.dtype)

    def step(idx):
        opt.zero_grad()
        loss = location_loss(enc.forward(x[idx]), data.locations[idx])
        loss.backward()
        opt.step()
        return float(loss.data)

    _epochs(data, epochs, batch_size, rng, step, "direct", log)


def _amplitudes(dec: Decoder, t_hat: np.ndarray, data: TrainData, idx, mode: str) -> np.ndarray:
    if mode == "true":
        return data.amplitudes[idx]
    return dec.ls_amplitudes(t_hat, data.targets[idx])


def train_known_kernel(enc: Encoder, dec: Decoder, data: TrainData, cfg: FriedTrainConfig,
                       log: TrainLog | None = None, skip_direct: bool = False) -> Encoder:
    """Direct-inference warm start, then the joint loss with the decoder frozen."""
    from .harness import TAG_SHUFFLE, substream
    rng = substream(cfg.seed, TAG_SHUFFLE, 1)
    if not skip_direct:
        train_direct(enc, data, cfg.direct_epochs, cfg.lr_encoder, cfg.batch_size, rng, log)
    d_before = dec.d.data.copy()
    dec.d.requires_grad = False
    opt = Adam(enc.params(), cfg.lr_encoder)
    x = data.inputs.astype(enc.dtype)
    N = data.inputs.shape[1]

    def step(idx):
        opt.zero_grad()
        t_hat = enc.forward(x[idx])
        a = _amplitudes(dec, t_hat.data, data, idx, cfg.amplitudes).astype(enc.dtype)
        loss = friednet_loss(dec.forward(t_hat, a, N), data.targets[idx], t_hat, data.locations[idx], cfg.gamma)
        loss.backward()
        opt.step()
        return float(loss.data)

    _epochs(data, cfg.joint_epochs, cfg.batch_size, rng, step, "joint", log)
    assert np.array_equal(d_before, dec.d.data), "frozen decoder changed during training"
    return enc


def _normalize(dec: Decoder, opt: Adam) -> None:
    """Normalize the kernel and rescale the decoder's Adam moments to the new units."""
    div = dec.normalize()
    opt.state.m[0] /= div
    opt.state.v[0] /= div * div


def train_unknown_kernel(enc: Encoder, dec: Decoder, data: TrainData, cfg: FriedTrainConfig,
                         log: TrainLog | None = None, skip_direct: bool = False):
    """Warm start, decoder-only stage, then joint training; the kernel is renormalized every epoch.

    Amplitudes are refit by least squares against the current kernel and the
    sample targets are the noisy inputs.
    """
    from .harness import TAG_SHUFFLE, substream
    rng = substream(cfg.seed, TAG_SHUFFLE, 2)
    if not skip_direct:
        train_direct(enc, data, cfg.direct_epochs, cfg.lr_encoder, cfg.batch_size, rng, log)
    dec.d.requires_grad = True
    x = data.inputs.astype(enc.dtype)
    N = data.inputs.shape[1]

    # decoder only: encoder outputs are fixed for the whole stage
    t_fixed = enc.predict(x)
    opt_d = Adam([dec.d], cfg.lr_decoder)

    def step_decoder(idx):
        opt_d.zero_grad()
        t_hat = Tensor(t_fixed[idx])
        a = dec.ls_amplitudes(t_hat.data, data.targets[idx]).astype(dec.d.dtype)
        loss = friednet_loss(dec.forward(t_hat, a, N), data.targets[idx], t_hat, data.locations[idx], cfg.gamma)
        loss.backward()
        opt_d.step()
        return float(loss.data)

    _epochs(data, cfg.decoder_epochs, cfg.batch_size, rng, step_decoder, "decoder", log,
            lambda: _normalize(dec, opt_d))

    opt_e = Adam(enc.params(), cfg.lr_encoder)
    opt_d = Adam([dec.d], cfg.lr_decoder)

    def step_joint(idx):
        opt_e.zero_grad()
        opt_d.zero_grad()
        t_hat = enc.forward(x[idx])
        a = dec.ls_amplitudes(t_hat.data, data.targets[idx]).astype(dec.d.dtype)
        loss = friednet_loss(dec.forward(t_hat, a, N), data.targets[idx], t_hat, data.locations[idx], cfg.gamma)
        loss.backward()
        opt_e.step()
        opt_d.step()
        return float(loss.data)

    _epochs(data, cfg.joint_epochs, cfg.batch_size, rng, step_joint, "joint", log,
            lambda: _normalize(dec, opt_d))
    return enc, dec


def finetune_datum(t_init: np.ndarray, dec: Decoder, y: np.ndarray, steps: int = 50, lr: float = 1e-3):
    """Refine one datum's locations by descending the sample error; amplitudes are refit each step.

    A step that does not lower the error is rejected and the step size halved,
    so the result is never worse than the initialization.
    """
    y = np.asarray(y, dtype=np.float64)
    N = y.size
    d64 = Decoder(Tensor(dec.d.data.astype(np.float64)), dec.delta, dec.T, dec.offset, dec.periodic)

    def error_and_grad(t):
        tt = Tensor(t[None, :], requires_grad=True)
        a = d64.ls_amplitudes(t[None, :], y[None, :])
        loss = ad.squared_error(d64.forward(tt, a, N), y[None, :])
        loss.backward()
        return float(loss.data), tt.grad[0]

    t = np.asarray(t_init, dtype=np.float64).copy()
    err, g = error_and_grad(t)
    step = lr
    for _ in range(steps):
        cand = t - step * g
        cerr, cg = error_and_grad(cand)
        if cerr < err:
            t, err, g = cand, cerr, cg
            step *= 1.2
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return t, err


def kernel_correlation(dec_or_d, delta: float | None, kernel: Kernel, grid_step: float = 1e-3) -> float:
    """Zero-lag normalized correlation between the decoder's kernel and a reference kernel."""
    if isinstance(dec_or_d, Decoder):
        d, delta = dec_or_d.d.data.astype(np.float64), dec_or_d.delta
    else:
        d = np.asarray(dec_or_d, dtype=np.float64)
    support = d.size * delta
    t = np.arange(0.0, support, grid_step)
    a = eval_piecewise(d, delta, t, support)
    b = np.real(kernel(t))
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
