"""Periodic Dirac streams, their sampled and noisy versions, and error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kernels import Kernel


@dataclass(frozen=True)
class DiracStream:
    """K weighted Diracs repeated with the given period.

    Locations live in [-period/2, period/2) and are kept sorted ascending.
    """

    period: float
    locations: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.locations, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=np.float64))
        if t.shape != a.shape or t.ndim != 1:
            raise ValueError("locations and amplitudes must be 1-D and of equal length")
        if t.size < 1:
            raise ValueError("a stream needs at least one Dirac")
        half = self.period / 2
        if np.any(t < -half) or np.any(t >= half):
            raise ValueError(f"locations must lie in [{-half}, {half})")
        if not np.all(np.isfinite(a)) or np.any(a == 0):
            raise ValueError("amplitudes must be finite and nonzero")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "locations", t[order])
        object.__setattr__(self, "amplitudes", a[order])

    @property
    def K(self) -> int:
        return self.locations.size

    def scaled(self, c: float) -> "DiracStream":
        return DiracStream(self.period, self.locations, c * self.amplitudes)

    def to_csv(self, path) -> None:
        lines = ["t,a"] + [f"{t!r},{a!r}" for t, a in zip(self.locations.tolist(), self.amplitudes.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, period: float = 1.0) -> "DiracStream":
        rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(period, rows[:, 0], rows[:, 1])


@dataclass(frozen=True)
class SamplingConfig:
    sample_count: int
    period: float = 1.0

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("need at least two samples per period")

    @property
    def T(self) -> float:
        return self.period / self.sample_count


@dataclass(frozen=True)
class SampleSet:
    values: np.ndarray
    config: SamplingConfig

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.config.sample_count,):
            raise ValueError(f"expected {self.config.sample_count} samples, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def to_csv(self, path) -> None:
        Path(path).write_text("".join(f"{v!r}\n" for v in np.real(self.values).tolist()))

    @classmethod
    def from_csv(cls, path, period: float = 1.0) -> "SampleSet":
        v = np.loadtxt(Path(path), ndmin=1)
        return cls(v, SamplingConfig(v.size, period))


@dataclass(frozen=True)
class NoiseSpec:
    psnr_db: float
    peak_amplitude: float

    @property
    def sigma(self) -> float:
        if math.isinf(self.psnr_db) and self.psnr_db > 0:
            return 0.0
        return abs(self.peak_amplitude) * 10.0 ** (-self.psnr_db / 20.0)

    @classmethod
    def for_stream(cls, stream: DiracStream, psnr_db: float) -> "NoiseSpec":
        return cls(psnr_db, float(np.max(np.abs(stream.amplitudes))))


@dataclass(frozen=True)
class ReconstructionResult:
    locations: np.ndarray
    amplitudes: np.ndarray
    method: str = ""
    period: float = 1.0
    flags: tuple = ()

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.locations, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.amplitudes))
        if t.shape != a.shape:
            raise ValueError("locations and amplitudes must have equal length")
        object.__setattr__(self, "locations", wrap_period(t, self.period))
        object.__setattr__(self, "amplitudes", a)


def wrap_period(t, period: float = 1.0) -> np.ndarray:
    """Map times into [-period/2, period/2)."""
    t = np.asarray(t, dtype=np.float64)
    w = np.mod(t + period / 2, period) - period / 2
    # mod can round up to exactly period/2
    return np.where(w >= period / 2, w - period, w)


def sample_matrix(locations, kernel: Kernel, config: SamplingConfig) -> np.ndarray:
    """G[..., n, k] = sum_l phi(t_k/T - n + l N), the periodic forward model.

    ``locations`` may carry leading batch dimensions: shape (..., K).
    """
    t = np.asarray(locations, dtype=np.float64)
    N = config.sample_count
    x = t[..., None, :] / config.T - np.arange(N)[:, None]
    lo, hi = kernel.support
    l_min = math.floor((lo - x.max()) / N)
    l_max = math.ceil((hi - x.min()) / N)
    G = np.zeros(x.shape, dtype=np.float64 if kernel.is_real else np.complex128)
    for l in range(l_min, l_max + 1):
        G += kernel(x + l * N)
    return G


def synthesize(stream: DiracStream, kernel: Kernel, config: SamplingConfig) -> SampleSet:
    """y[n] = sum_k a_k sum_l phi(t_k/T - n + l N)."""
    G = sample_matrix(stream.locations, kernel, config)
    return SampleSet(G @ stream.amplitudes, config)


def add_noise(samples: SampleSet, noise: NoiseSpec, rng: np.random.Generator) -> SampleSet:
    sigma = noise.sigma
    if sigma < 0:
        raise ValueError("noise level must be nonnegative")
    eps = rng.standard_normal(samples.values.shape)
    return SampleSet(samples.values + sigma * eps, samples.config)


# ---------------------------------------------------------------------------
# alignment and metrics


def circular_distance(a, b, period: float = 1.0) -> np.ndarray:
    return np.abs(wrap_period(np.asarray(a) - np.asarray(b), period))


@dataclass(frozen=True)
class AlignedEstimate:
    """Estimates reordered to the truth: NaN marks a truth with no matching estimate."""

    locations: np.ndarray
    amplitudes: np.ndarray
    missing: int
    spurious: int
    cost: float


def align_estimates(result: ReconstructionResult, truth: DiracStream) -> AlignedEstimate:
    """Minimum-cost pairing of estimates to true Diracs under circular squared distance."""
    K = truth.K
    est = result.locations
    locs = np.full(K, np.nan)
    amps = np.full(K, np.nan, dtype=np.result_type(result.amplitudes, np.float64))
    finite = np.flatnonzero(np.isfinite(est))
    if finite.size == 0:
        return AlignedEstimate(locs, amps, K, 0, 0.0)
    d = circular_distance(truth.locations[:, None], est[finite][None, :], truth.period) ** 2
    rows, cols = linear_sum_assignment(d)
    locs[rows] = truth.locations[rows] + wrap_period(est[finite][cols] - truth.locations[rows], truth.period)
    amps[rows] = result.amplitudes[finite][cols]
    return AlignedEstimate(locs, amps, K - rows.size, est.size - rows.size, float(d[rows, cols].sum()))


@dataclass(frozen=True)
class SDResult:
    per_k: np.ndarray
    mean: float
    median: float
    matched: np.ndarray = field(repr=False)


def sd_metric(estimates, truth: DiracStream) -> SDResult:
    """Root-mean-square location error per Dirac over J aligned realizations.

    ``estimates`` is J x K, aligned to ``truth``; NaN entries (missed Diracs)
    are left out of the average for that Dirac.
    """
    est = np.asarray(estimates, dtype=np.float64)
    if est.ndim == 1:
        est = est[None, :]
    if est.shape[0] == 0:
        raise ValueError("sd_metric needs at least one realization")
    err = wrap_period(est - truth.locations[None, :], truth.period)
    ok = np.isfinite(err)
    count = ok.sum(axis=0)
    sq = np.where(ok, err, 0.0) ** 2
    with np.errstate(invalid="ignore"):
        per_k = np.sqrt(sq.sum(axis=0) / count)
    valid = per_k[np.isfinite(per_k)]
    mean = float(valid.mean()) if valid.size else float("nan")
    median = float(np.median(valid)) if valid.size else float("nan")
    return SDResult(per_k, mean, median, count)


# ---------------------------------------------------------------------------
# breakdown threshold


def breakdown_psnr(P: int, lam: float, dt_over_T) -> np.ndarray:
    """PSNR (dB) below which a subspace swap may occur for two equal Diracs.

    Evaluates 10 log10 of 8 h ln(h) / (h - sin(lam h x / 2) / sin(lam x / 2))^2
    with h = P/2 + 1 and x the Dirac separation in sampling periods.
    """
    x = np.asarray(dt_over_T, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("separation must be positive")
    h = P / 2 + 1
    s_den = np.sin(lam * x / 2)
    if np.any(np.abs(s_den) < 1e-300):
        raise ValueError("separation sits on a zero of sin(lam x / 2)")
    gap = h - np.sin(lam * h * x / 2) / s_den
    if np.any(gap == 0):
        raise ValueError("breakdown ratio is undefined: denominator vanishes")
    return 10 * np.log10(8 * h * np.log(h) / gap ** 2)


def first_ratio_zero(P: int, lam: float) -> float:
    """Smallest positive separation where sin(lam h x/2) vanishes (h = P/2 + 1)."""
    return 2 * math.pi / (lam * (P / 2 + 1))
