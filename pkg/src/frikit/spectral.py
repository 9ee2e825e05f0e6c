"""Moments, Toeplitz embedding, low-rank denoising and Prony location recovery."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .kernels import ExpReproCoeffs, Kernel
from .signal_model import SampleSet, sample_matrix, wrap_period


class DegenerateRootsError(ArithmeticError):
    pass


class TrivialNullspaceError(ArithmeticError):
    pass


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MomentSequence:
    s: np.ndarray
    omega0: float
    lam: float
    T: float

    @property
    def P(self) -> int:
        return self.s.shape[-1] - 1

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("m,re,im\n")
            for m, v in enumerate(self.s.tolist()):
                fh.write(f"{m},{v.real!r},{v.imag!r}\n")


def moments(samples: SampleSet, coeffs: ExpReproCoeffs) -> MomentSequence:
    """s[m] = sum_n c_{m,n} y[n]."""
    y = np.asarray(samples.values)
    if y.shape[-1] != coeffs.N:
        raise ValueError(f"coefficients are for N={coeffs.N}, got {y.shape[-1]} samples")
    return MomentSequence(coeffs.c @ y, coeffs.omega0, coeffs.lam, samples.config.T)


def moments_batch(y: np.ndarray, coeffs: ExpReproCoeffs) -> np.ndarray:
    """Moments of a (batch, N) array of sample vectors, shape (batch, P+1)."""
    return np.asarray(y) @ coeffs.c.T


# ---------------------------------------------------------------------------
# Toeplitz structure


def toeplitz_index(P: int, M: int) -> np.ndarray:
    """idx[i, j] = M + i - j, the moment index stored at entry (i, j)."""
    if not 0 <= M <= P:
        raise ValueError(f"M must lie in [0, P]; got M={M}, P={P}")
    return M + np.arange(P - M + 1)[:, None] - np.arange(M + 1)[None, :]


def build_toeplitz(s, M: int) -> np.ndarray:
    """(P-M+1) x (M+1) matrix with entry (i, j) = s[M + i - j]; works on stacked sequences."""
    s = s.s if isinstance(s, MomentSequence) else np.asarray(s)
    return s[..., toeplitz_index(s.shape[-1] - 1, M)]


def read_diagonals(mat: np.ndarray) -> np.ndarray:
    """Average each diagonal back into a moment sequence (inverse of build_toeplitz)."""
    mat = np.asarray(mat)
    rows, cols = mat.shape[-2:]
    P, M = rows + cols - 2, cols - 1
    idx = toeplitz_index(P, M).ravel()
    flat = mat.reshape(mat.shape[:-2] + (-1,))
    counts = np.bincount(idx, minlength=P + 1)
    out = np.zeros(mat.shape[:-2] + (P + 1,), dtype=np.result_type(mat, np.float64))
    for pos, m in enumerate(idx):
        out[..., m] += flat[..., pos]
    return out / counts


def diagonal_average_matrix(rows: int, cols: int) -> np.ndarray:
    """Matrix A with vec(P_T(X)) = A vec(X) for row-major vec."""
    P, M = rows + cols - 2, cols - 1
    idx = toeplitz_index(P, M).ravel()
    counts = np.bincount(idx, minlength=P + 1)
    same = idx[:, None] == idx[None, :]
    return same / counts[idx][:, None]


def toeplitz_project(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat)
    rows, cols = mat.shape[-2:]
    return build_toeplitz(read_diagonals(mat), cols - 1)


def rank_project(mat: np.ndarray, K: int) -> np.ndarray:
    """Best rank-K approximation by truncating the SVD."""
    mat = np.asarray(mat)
    if K > min(mat.shape[-2:]):
        raise ValueError(f"rank {K} exceeds matrix dimensions {mat.shape[-2:]}")
    try:
        U, s, Vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"SVD did not converge: {exc}") from exc
    return (U[..., :, :K] * s[..., None, :K]) @ Vh[..., :K, :]


def pwgd(noisy: np.ndarray, K: int, delta1: float = 1.0, delta2: float = 1.0, iterations: int = 10,
         threshold=None, return_iterates: bool = False):
    """Relaxed alternating projection onto rank-K and Toeplitz matrices.

    Starting from L = 0 and H = noisy, each iteration computes
        L <- R((1 - delta1) L + delta1 H)
        H <- T(delta2 L + (1 - delta2) H)
    where R is the rank-K projection (or ``threshold`` if given) and T the
    Toeplitz projection.  delta1 = delta2 = 1 is plain Cadzow denoising.
    """
    if not (0 < delta1 <= 1 and 0 < delta2 <= 1):
        raise ValueError("step sizes must lie in (0, 1]")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    project = threshold if threshold is not None else (lambda X: rank_project(X, K))
    H = np.asarray(noisy)
    L = np.zeros_like(H)
    iterates = []
    for _ in range(iterations):
        L = project((1 - delta1) * L + delta1 * H)
        H = toeplitz_project(delta2 * L + (1 - delta2) * H)
        iterates.append(H)
    return (H, iterates) if return_iterates else H


def cadzow(noisy: np.ndarray, K: int, iterations: int = 10) -> np.ndarray:
    return pwgd(noisy, K, 1.0, 1.0, iterations)


def soft_threshold(mat: np.ndarray, K: int, mu: float) -> np.ndarray:
    """Shrink every singular value by mu * sigma_{K+1}, flooring at zero."""
    U, s, Vh = np.linalg.svd(mat, full_matrices=False)
    g = np.maximum(s - mu * s[..., K:K + 1], 0.0)
    return (U * g[..., None, :]) @ Vh


# ---------------------------------------------------------------------------
# Prony


def annihilating_filter(mat: np.ndarray, K: int) -> np.ndarray:
    """Right singular vector of the smallest singular value of the (P-K+1)x(K+1) matrix, h[0] = 1."""
    mat = np.asarray(mat)
    if mat.shape[-1] != K + 1:
        mat = build_toeplitz(read_diagonals(mat), K)
    if not np.any(mat):
        raise TrivialNullspaceError("moment matrix is zero; the annihilating filter is undefined")
    _, _, Vh = np.linalg.svd(mat)
    h = np.conj(Vh[-1])
    if abs(h[0]) < 1e-14:
        raise DegenerateRootsError("leading filter coefficient vanishes")
    return h / h[0]


def filter_roots(h: np.ndarray) -> np.ndarray:
    """Roots of h[0] z^K + h[1] z^{K-1} + ... + h[K] via companion-matrix eigenvalues."""
    h = np.asarray(h, dtype=complex)
    K = h.size - 1
    if K == 0:
        return np.zeros(0, dtype=complex)
    C = np.zeros((K, K), dtype=complex)
    C[0, :] = -h[1:] / h[0]
    C[1:, :-1] = np.eye(K - 1)
    return np.linalg.eigvals(C)


def roots_to_locations(u: np.ndarray, lam: float, T: float, period: float) -> np.ndarray:
    return np.sort(wrap_period(T * np.angle(u) / lam, period))


def prony_locations(mat_or_moments, K: int, lam: float, T: float, period: float = 1.0) -> np.ndarray:
    """Locations from the roots of the annihilating filter, mapped into [-period/2, period/2)."""
    if isinstance(mat_or_moments, MomentSequence):
        mat = build_toeplitz(mat_or_moments.s, K)
    else:
        mat = np.asarray(mat_or_moments)
        if mat.ndim == 1:
            mat = build_toeplitz(mat, K)
    h = annihilating_filter(mat, K)
    u = filter_roots(h)
    if u.size < K or np.any(~np.isfinite(u)):
        raise DegenerateRootsError("fewer than K finite roots")
    if K > 1 and np.min(np.abs(u[:, None] - u[None, :]) + np.eye(K)) < 1e-14:
        raise DegenerateRootsError("filter has repeated roots")
    return roots_to_locations(u, lam, T, period)


def amplitudes_ls(locations, samples: SampleSet, kernel: Kernel):
    """Least-squares amplitudes; returns (amplitudes, rank_deficient flag)."""
    G = sample_matrix(locations, kernel, samples.config)
    a, _, rank, _ = np.linalg.lstsq(G, samples.values, rcond=None)
    deficient = rank < G.shape[1]
    if deficient:
        warnings.warn("amplitude design matrix is rank deficient; returning least-norm solution",
                      RankDeficientWarning, stacklevel=2)
    return a, bool(deficient)


def true_filter(locations, lam: float, T: float) -> np.ndarray:
    """Unit-norm filter whose roots are u_k = exp(j lam t_k / T)."""
    u = np.exp(1j * lam * np.asarray(locations) / T)
    h = np.array([1.0 + 0j])
    for uk in u:
        h = np.convolve(h, [1.0, -uk])
    return h / np.linalg.norm(h)


def default_M(P: int) -> int:
    return math.ceil(P / 2)
