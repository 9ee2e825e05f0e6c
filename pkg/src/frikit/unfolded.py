"""Deep-unfolded PWGD denoiser coupled to Prony's method."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import ExpReproCoeffs, Kernel
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.optim import Adam
from .signal_model import ReconstructionResult, SampleSet
from .spectral import (amplitudes_ls, build_toeplitz, diagonal_average_matrix, moments_batch, prony_locations,
                       toeplitz_index)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class UnfoldedLayer:
    W1: Tensor
    W2: Tensor
    W3: Tensor
    W4: Tensor
    mu_raw: Tensor

    def params(self) -> list[Tensor]:
        return [self.W1, self.W2, self.W3, self.W4, self.mu_raw]


@dataclass
class UnfoldedNetwork:
    layers: list
    K: int
    P: int
    M: int
    dtype: type = np.complex128
    _proj: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._proj = diagonal_average_matrix(self.P - self.M + 1, self.M + 1)

    @property
    def rows(self) -> int:
        return self.P - self.M + 1

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name in ("W1", "W2", "W3", "W4", "mu_raw"):
                out[f"layer{i}.{name}"] = getattr(layer, name).data
        return out

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for name in ("W1", "W2", "W3", "W4", "mu_raw"):
                t = getattr(layer, name)
                t.data = np.asarray(arrays[f"layer{i}.{name}"]).astype(t.data.dtype).reshape(t.shape)

    def parameter_count(self) -> int:
        """Count of free real-or-complex entries (a complex weight counts once)."""
        return sum(p.data.size for p in self.params())

    def forward(self, noisy, return_layers: bool = False):
        """Run the unfolded iterations on a (batch, rows, M+1) stack of Toeplitz matrices."""
        H = noisy if isinstance(noisy, Tensor) else Tensor(np.asarray(noisy, dtype=self.dtype))
        L = Tensor(np.zeros_like(H.data))
        outputs = []
        proj = self._proj.astype(H.data.real.dtype)
        shape = (self.rows, self.M + 1)
        for layer in self.layers:
            mu = ad.sigmoid(layer.mu_raw)
            L = ad.svd_soft_threshold(ad.matmul(layer.W1, L) + ad.matmul(layer.W2, H), self.K, mu)
            H = ad.linear_map(ad.matmul(layer.W3, L) + ad.matmul(layer.W4, H), proj, shape)
            outputs.append(H)
        return (H, outputs) if return_layers else H

    def denoise(self, noisy: np.ndarray) -> np.ndarray:
        return self.forward(noisy).data


def init_unfolded(P: int, K: int, M: int | None = None, layers: int = 5, delta1: float = 0.9999,
                  delta2: float = 0.9999, mu0: float = 0.25, dtype=np.complex128) -> UnfoldedNetwork:
    M = math.ceil(P / 2) if M is None else M
    if not K <= M <= P:
        raise ValueError(f"need K <= M <= P; got K={K}, M={M}, P={P}")
    if layers < 1:
        raise ValueError("need at least one layer")
    if K + 1 > min(P - M + 1, M + 1):
        raise ValueError("Toeplitz matrix too small for the soft threshold at this K")
    n = P - M + 1
    eye = np.eye(n, dtype=dtype)
    real = np.zeros(0, dtype=dtype).real.dtype
    out = []
    for _ in range(layers):
        out.append(UnfoldedLayer(
            Tensor((1 - delta1) * eye, requires_grad=True),
            Tensor(delta1 * eye, requires_grad=True),
            Tensor(delta2 * eye, requires_grad=True),
            Tensor((1 - delta2) * eye, requires_grad=True),
            Tensor(np.array(logit(mu0), dtype=real), requires_grad=True),
        ))
    return UnfoldedNetwork(out, K, P, M, dtype)


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class ZeroEigLossConfig:
    alpha: float = 10.0
    beta: float = 0.005

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


def reshape_matrix(P: int, M: int, K: int) -> np.ndarray:
    """Linear map from a flattened (P-M+1)x(M+1) matrix to the (P-K+1)x(K+1) matrix of its diagonal means."""
    src = toeplitz_index(P, M).ravel()
    counts = np.bincount(src, minlength=P + 1)
    read = (src[None, :] == np.arange(P + 1)[:, None]) / counts[:, None]  # (P+1, n_in)
    dst = toeplitz_index(P, K).ravel()
    return read[dst]


def zero_eig_loss(S_hat, h_true: np.ndarray, cfg: ZeroEigLossConfig = ZeroEigLossConfig()) -> Tensor:
    """Mean over the batch of ||S h||^2 + alpha exp(-beta ||S (I - h h^H)||_F^2).

    S_hat: (batch, P-K+1, K+1); h_true: (batch, K+1) unit-norm filters.
    """
    S_hat = ad.as_tensor(S_hat)
    h = np.asarray(h_true)
    if h.ndim == 1:
        h = h[None, :]
    if S_hat.ndim == 2:
        S_hat = ad.reshape(S_hat, (1,) + S_hat.shape)
    if h.shape[-1] != S_hat.shape[-1]:
        raise ValueError(f"filter length {h.shape[-1]} does not match matrix width {S_hat.shape[-1]}")
    h = h.astype(S_hat.dtype if S_hat.is_complex else np.complex128)
    annihilate = ad.frobenius_norm2(ad.matmul(S_hat, h[:, :, None]), axes=(1, 2))
    eye = np.eye(h.shape[-1], dtype=h.dtype)
    orth = eye[None] - h[:, :, None] * np.conj(h[:, None, :])
    spread = ad.frobenius_norm2(ad.matmul(S_hat, orth), axes=(1, 2))
    reg = ad.scale(ad.exp(ad.scale(spread, -cfg.beta)), cfg.alpha)
    return ad.mean(annihilate + reg)


def unfolded_loss(net: UnfoldedNetwork, noisy: np.ndarray, h_true: np.ndarray,
                  cfg: ZeroEigLossConfig = ZeroEigLossConfig()) -> Tensor:
    out = net.forward(noisy)
    mat = reshape_matrix(net.P, net.M, net.K).astype(out.data.real.dtype)
    S_hat = ad.linear_map(out, mat, (net.P - net.K + 1, net.K + 1))
    return zero_eig_loss(S_hat, h_true, cfg)


# ---------------------------------------------------------------------------
# training


class DivergenceError(FloatingPointError):
    pass


def train_unfolded(net: UnfoldedNetwork, noisy: np.ndarray, h_true: np.ndarray, epochs: int = 500,
                   lr: float = 2e-4, batch_size: int = 64, seed: int = 0,
                   cfg: ZeroEigLossConfig = ZeroEigLossConfig(), log=None) -> list[float]:
    """Adam on the mean zero-eigenvalue loss; returns per-epoch mean losses.

    noisy: (n, rows, M+1) Toeplitz matrices of noisy moments; h_true: (n, K+1).
    """
    rng = np.random.default_rng(seed)
    opt = Adam(net.params(), lr)
    n = noisy.shape[0]
    noisy = noisy.astype(net.dtype)
    h_true = h_true.astype(net.dtype)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            loss = unfolded_loss(net, noisy[idx], h_true[idx], cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}")
            loss.backward()
            opt.step()
            total += value * idx.size
        history.append(total / n)
        if log is not None:
            log(epoch, history[-1])
    return history


def reconstruct_unfolded(net: UnfoldedNetwork, samples: SampleSet, coeffs: ExpReproCoeffs,
                         kernel: Kernel | None = None) -> ReconstructionResult:
    s = moments_batch(samples.values[None, :], coeffs)
    denoised = net.denoise(build_toeplitz(s, net.M).astype(net.dtype))[0].astype(np.complex128)
    t = prony_locations(denoised, net.K, coeffs.lam, samples.config.T, samples.config.period)
    if kernel is None:
        a = np.full(t.shape, np.nan)
    else:
        a, _ = amplitudes_ls(t, samples, kernel)
    return ReconstructionResult(t, a, "unfolded", samples.config.period)
