"""Data generation and Monte Carlo evaluation shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernels import Kernel
from .signal_model import DiracStream, ReconstructionResult, SamplingConfig, align_estimates, sample_matrix, sd_metric


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator for (seed, tags...); the same key always gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(t) % 2**32 for t in tags]))


# tags keep the purposes of substreams apart
TAG_TRAIN, TAG_EVAL, TAG_INIT, TAG_SHUFFLE, TAG_CALCIUM = 1, 2, 3, 4, 5


@dataclass
class Batch:
    """Clean and noisy samples for n streams with K Diracs each."""

    locations: np.ndarray  # (n, K), sorted per row
    amplitudes: np.ndarray  # (n, K)
    clean: np.ndarray  # (n, N)
    noisy: np.ndarray  # (n, N)
    sigma: np.ndarray  # (n,)


def synth_batch(locations, amplitudes, kernel: Kernel, config: SamplingConfig) -> np.ndarray:
    G = sample_matrix(locations, kernel, config)
    return np.einsum("...nk,...k->...n", G, np.asarray(amplitudes))


def noise_sigma(amplitudes, psnr_db: float) -> np.ndarray:
    peak = np.max(np.abs(np.asarray(amplitudes)), axis=-1)
    if np.isinf(psnr_db):
        return np.zeros_like(peak)
    return peak * 10.0 ** (-psnr_db / 20.0)


def make_batch(locations, amplitudes, kernel: Kernel, config: SamplingConfig, psnr_db: float,
               rng: np.random.Generator, amplitude_scale: float = 1.0,
               kernel_scale: float = 1.0) -> Batch:
    """Sample streams and add Gaussian noise at the given PSNR.

    ``amplitude_scale`` and ``kernel_scale`` multiply the amplitudes and the
    kernel respectively; the noise level follows the scaled amplitudes.
    """
    t = np.sort(np.asarray(locations, dtype=np.float64), axis=-1)
    order = np.argsort(np.asarray(locations), axis=-1)
    a = np.take_along_axis(np.asarray(amplitudes, dtype=np.float64), order, axis=-1) * amplitude_scale
    clean = synth_batch(t, a, kernel, config) * kernel_scale
    sigma = noise_sigma(a, psnr_db)
    noisy = clean + sigma[:, None] * rng.standard_normal(clean.shape)
    return Batch(t, a, clean, noisy, sigma)


def random_streams(rng: np.random.Generator, n: int, K: int, period: float = 1.0,
                   amp_range=(0.5, 10.0)):
    t = rng.uniform(-period / 2, period / 2, size=(n, K))
    a = rng.uniform(*amp_range, size=(n, K))
    return t, a


def _psnr_tag(psnr_db: float) -> int:
    return int(round(psnr_db * 1000)) if np.isfinite(psnr_db) else -1


def training_batch(seed: int, n: int, K: int, kernel: Kernel, config: SamplingConfig, psnr_db: float,
                   amplitude_scale: float = 1.0, kernel_scale: float = 1.0) -> Batch:
    rng = substream(seed, TAG_TRAIN, K, _psnr_tag(psnr_db))
    t, a = random_streams(rng, n, K, config.period)
    return make_batch(t, a, kernel, config, psnr_db, rng, amplitude_scale, kernel_scale)


def pair_batch(seed: int, J: int, dt0: float, kernel: Kernel, config: SamplingConfig, psnr_db: float,
               t0: float = 0.1) -> Batch:
    """J realizations of two equal-amplitude Diracs at t0 and t0 + dt0."""
    rng = substream(seed, TAG_EVAL, _psnr_tag(psnr_db), int(round(np.log10(dt0) * 1000)))
    a = rng.uniform(0.5, 10.0, size=J)
    t = np.tile([t0, t0 + dt0], (J, 1))
    return make_batch(t, np.stack([a, a], axis=1), kernel, config, psnr_db, rng)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class CellResult:
    psnr: float
    dt0: float
    sd_mean: float
    sd_median: float
    misses: int
    falses: int

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "dt0": self.dt0, "sd_mean": self.sd_mean, "sd_median": self.sd_median,
                "misses": self.misses, "falses": self.falses}


Method = Callable[[np.ndarray], list]


def evaluate(method: Method, batch: Batch, period: float = 1.0):
    """Align the method's estimates to the truth, row by row.

    ``method`` maps a (J, N) array of noisy samples to a list of J location
    arrays; a ``None`` entry means the method failed on that realization.
    Returns the (J, K) aligned locations with NaN for misses and the total
    miss and spurious counts.
    """
    estimates = method(batch.noisy)
    J, K = batch.locations.shape
    aligned = np.full((J, K), np.nan)
    misses = falses = 0
    for j, est in enumerate(estimates):
        truth = DiracStream(period, batch.locations[j], batch.amplitudes[j])
        if est is None:
            misses += K
            continue
        est = np.atleast_1d(np.asarray(est, dtype=np.float64))
        al = align_estimates(ReconstructionResult(est, np.ones_like(est), period=period), truth)
        # align_estimates works on the sorted truth; batch rows are sorted too
        aligned[j] = al.locations
        misses += al.missing
        falses += al.spurious
    return aligned, misses, falses


def evaluate_cell(method: Method, batch: Batch, psnr: float, dt0: float, period: float = 1.0) -> CellResult:
    aligned, misses, falses = evaluate(method, batch, period)
    truth = DiracStream(period, batch.locations[0], batch.amplitudes[0])
    sd = sd_metric(aligned, truth)
    return CellResult(float(psnr), float(dt0), sd.mean, sd.median, int(misses), int(falses))


def prony_method(denoise, coeffs, K: int, M: int, T: float, period: float = 1.0) -> Method:
    """Moments, Toeplitz matrix, ``denoise`` on the whole batch, then Prony row by row.

    Rows where root finding fails come back as ``None``.
    """
    from .spectral import build_toeplitz, moments_batch, prony_locations

    def run(noisy: np.ndarray) -> list:
        mats = denoise(build_toeplitz(moments_batch(noisy, coeffs), M))
        out = []
        for mat in mats:
            try:
                out.append(prony_locations(np.asarray(mat, dtype=np.complex128), K, coeffs.lam, T, period))
            except (ArithmeticError, np.linalg.LinAlgError):
                out.append(None)
        return out

    return run


def encoder_method(encoder, batch_size: int = 1024) -> Method:
    return lambda noisy: list(encoder.predict(noisy, batch_size).astype(np.float64))
