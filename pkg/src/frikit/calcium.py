"""Spike detection in fluorescence traces with sliding-window encoders.

Windows of several lengths are passed through trained encoders; every
in-window location estimate votes for a time bin, and votes are normalized by
how many (model, window) pairs could have voted for that bin.  Peaks of the
resulting histogram are the detections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .friednet import Decoder, Encoder


@dataclass(frozen=True)
class FluorescenceTrace:
    values: np.ndarray
    sample_rate: float = 60.0
    neuropil: np.ndarray | None = None
    neuropil_corrected: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("trace values must be finite")
        object.__setattr__(self, "values", v)
        if self.neuropil is not None:
            npl = np.asarray(self.neuropil, dtype=np.float64)
            if npl.shape != v.shape:
                raise ValueError("neuropil length must match the trace")
            object.__setattr__(self, "neuropil", npl)

    @property
    def T(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.values.size * self.T

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,fluorescence" + (",neuropil\n" if self.neuropil is not None else "\n"))
            for i, v in enumerate(self.values.tolist()):
                row = f"{i * self.T!r},{v!r}"
                if self.neuropil is not None:
                    row += f",{float(self.neuropil[i])!r}"
                fh.write(row + "\n")

    @classmethod
    def from_csv(cls, path) -> "FluorescenceTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header[:2] != ["time", "fluorescence"]:
            raise ValueError("trace CSV must start with columns time,fluorescence")
        rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        steps = np.diff(rows[:, 0])
        if rows.shape[0] < 2 or np.any(steps <= 0):
            raise ValueError("trace times must be increasing")
        rate = 1.0 / float(np.median(steps))
        neuropil = rows[:, 2] if rows.shape[1] > 2 and len(header) > 2 else None
        return cls(rows[:, 1], rate, neuropil)


@dataclass(frozen=True)
class SpikeTrain:
    times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.sort(np.asarray(self.times, dtype=np.float64).ravel()))

    def to_csv(self, path) -> None:
        Path(path).write_text("".join(f"{t!r}\n" for t in self.times.tolist()))

    @classmethod
    def from_csv(cls, path) -> "SpikeTrain":
        text = Path(path).read_text().strip()
        return cls(np.array([float(x) for x in text.split()]) if text else np.zeros(0))


@dataclass(frozen=True)
class WindowConfig:
    short: tuple = (32, 16)
    long: tuple = (128, 64, 32)
    k_short: int = 1
    k_long: int = 7
    step: int = 1
    acceptance: float = 2.0  # in sampling periods

    def __post_init__(self):
        if min(self.short + self.long) < 2:
            raise ValueError("window lengths must be at least 2")
        if self.step < 1:
            raise ValueError("window step must be at least 1")


# ---------------------------------------------------------------------------
# preprocessing and segmentation


def preprocess_trace(trace: FluorescenceTrace, ratio: float = 0.7) -> FluorescenceTrace:
    """Subtract ratio * neuropil; traces without neuropil pass through unflagged."""
    if trace.neuropil is None:
        return trace
    return FluorescenceTrace(trace.values - ratio * trace.neuropil, trace.sample_rate, None, True)


OUTSIDE = 1.0  # label for absent spikes; lies outside [-0.5, 0.5)


@dataclass
class WindowSet:
    inputs: np.ndarray  # (n, W) debiased windows
    labels: np.ndarray  # (n, K) rescaled in-window spike times, padded with OUTSIDE
    starts: np.ndarray  # (n,) first sample index of each window
    counts: np.ndarray  # (n,) number of true spikes inside each window
    width: int


def window_view(values: np.ndarray, width: int, step: int = 1) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if width > values.size:
        raise ValueError(f"window of {width} samples is longer than the trace ({values.size})")
    return np.lib.stride_tricks.sliding_window_view(values, width)[::step]


def make_windows(values: np.ndarray, spike_times, sample_rate: float, width: int, K: int, step: int = 1,
                 training: bool = True) -> WindowSet:
    """Overlapping windows, each shifted to a zero minimum, with spikes rescaled to [-0.5, 0.5).

    Sample i of a window starting at s sits at rescaled time (i - s)/width - 0.5.
    At most K spikes are labelled (the earliest ones); missing ones get OUTSIDE.
    With ``training`` set, windows without spikes are dropped.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    win = window_view(values, width, step)
    starts = np.arange(win.shape[0]) * step
    inputs = win - win.min(axis=1, keepdims=True)
    spikes = np.sort(np.asarray(spike_times, dtype=np.float64)) * sample_rate  # in samples
    labels = np.full((starts.size, K), OUTSIDE)
    counts = np.zeros(starts.size, dtype=np.int64)
    lo = np.searchsorted(spikes, starts, side="left")
    hi = np.searchsorted(spikes, starts + width, side="left")
    for j, (a, b) in enumerate(zip(lo, hi)):
        counts[j] = b - a
        inside = (spikes[a:min(b, a + K)] - starts[j]) / width - 0.5
        labels[j, :inside.size] = inside
    if training:
        keep = counts > 0
        inputs, labels, starts, counts = inputs[keep], labels[keep], starts[keep], counts[keep]
    return WindowSet(inputs, labels, starts, counts, width)


def calcium_decoder(width: int, delta: float, rng: np.random.Generator, dtype=np.float64) -> Decoder:
    """Learnable non-periodic decoder spanning one window.

    The argument x = t W - i + (3W/2 - 1) equals W - 1 - lag for a sample
    ``lag`` periods after the spike, so a causal transient maps onto [0, W).
    """
    return Decoder.learnable(float(width), delta, 1.0 / width, rng, dtype, offset=1.5 * width - 1,
                             periodic=False)


# ---------------------------------------------------------------------------
# detection


@dataclass
class WindowModel:
    width: int
    K: int
    encoder: Encoder


@dataclass
class DetectionHistogram:
    counts: np.ndarray  # votes per bin
    coverage: np.ndarray  # (model, window) pairs covering each bin
    sums: np.ndarray  # sum of voted times per bin, for sub-bin timing
    T: float

    @property
    def probability(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(self.coverage > 0, self.counts / np.maximum(self.coverage, 1), 0.0)
        return p

    @property
    def edges(self) -> np.ndarray:
        return (np.arange(self.counts.size + 1) - 0.5) * self.T


@dataclass
class Detections:
    times: np.ndarray
    probabilities: np.ndarray
    histogram: DetectionHistogram = field(repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,probability\n")
            for t, p in zip(self.times.tolist(), self.probabilities.tolist()):
                fh.write(f"{t!r},{p!r}\n")


def build_histogram(models: list[WindowModel], values: np.ndarray, sample_rate: float, step: int = 1,
                    batch_size: int = 2048) -> DetectionHistogram:
    if not models:
        raise ValueError("double-consistency detection needs at least one trained model")
    values = np.asarray(values, dtype=np.float64)
    n_bins = values.size
    T = 1.0 / sample_rate
    counts = np.zeros(n_bins)
    coverage = np.zeros(n_bins)
    sums = np.zeros(n_bins)
    for model in models:
        W = model.width
        win = window_view(values, W, step)
        starts = np.arange(win.shape[0]) * step
        inputs = win - win.min(axis=1, keepdims=True)
        pred = model.encoder.predict(inputs, batch_size).astype(np.float64)  # (n, K)
        cover = np.zeros(n_bins + 1)
        np.add.at(cover, starts, 1.0)
        np.add.at(cover, starts + W, -1.0)
        coverage += np.cumsum(cover)[:n_bins]
        inside = (pred >= -0.5) & (pred < 0.5)
        samples = starts[:, None] + (pred + 0.5) * W  # in sample units
        bins = np.clip(np.floor(samples + 0.5).astype(np.int64), 0, n_bins - 1)
        # one vote per window and bin
        for j in range(pred.shape[0]):
            seen = set()
            for k in np.flatnonzero(inside[j]):
                b = int(bins[j, k])
                if b in seen or b < starts[j] or b >= starts[j] + W:
                    continue
                seen.add(b)
                counts[b] += 1.0
                sums[b] += samples[j, k]
    return DetectionHistogram(counts, coverage, sums, T)


def find_peaks(prob: np.ndarray, threshold: float, radius: int) -> np.ndarray:
    """Bins that hold the largest probability within +-radius and reach the threshold.

    Ties are broken toward the earlier bin so plateaus yield a single peak.
    """
    n = prob.size
    order = np.lexsort((np.arange(n), -prob))
    taken = np.zeros(n, dtype=bool)
    peaks = []
    for b in order:
        if prob[b] <= 0 or prob[b] < threshold:
            break
        lo, hi = max(0, b - radius), min(n, b + radius + 1)
        if taken[lo:hi].any():
            continue
        taken[b] = True
        peaks.append(b)
    return np.sort(np.array(peaks, dtype=np.int64))


def double_consistency_detect(models: list[WindowModel], trace: FluorescenceTrace, cfg: WindowConfig,
                              threshold: float = 0.0) -> Detections:
    hist = build_histogram(models, trace.values, trace.sample_rate, cfg.step)
    prob = hist.probability
    radius = max(1, int(math.ceil(cfg.acceptance)))
    peaks = find_peaks(prob, threshold, radius)
    times = np.where(hist.counts[peaks] > 0, hist.sums[peaks] / np.maximum(hist.counts[peaks], 1), peaks) * hist.T
    return Detections(times, prob[peaks], hist)


# ---------------------------------------------------------------------------
# evaluation


def match_detections(det_times: np.ndarray, truth: np.ndarray, tolerance: float) -> int:
    """Size of a maximum matching where a detection matches a truth within +-tolerance.

    Sweeping both sorted lists and pairing each detection with the earliest
    unmatched truth in range is optimal for equal-width acceptance windows.
    """
    det = np.sort(np.asarray(det_times, dtype=np.float64))
    tru = np.sort(np.asarray(truth, dtype=np.float64))
    i = matched = 0
    for t in det:
        while i < tru.size and tru[i] < t - tolerance:
            i += 1
        if i < tru.size and tru[i] <= t + tolerance:
            matched += 1
            i += 1
    return matched


@dataclass
class ROC:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("threshold,tpr,fpr\n")
            for th, a, b in zip(self.thresholds.tolist(), self.tpr.tolist(), self.fpr.tolist()):
                fh.write(f"{th!r},{a!r},{b!r}\n")

    def best_tpr(self, max_fpr: float) -> float:
        ok = self.fpr <= max_fpr
        return float(self.tpr[ok].max()) if ok.any() else 0.0


def roc_eval(detections: Detections, truth: SpikeTrain, tolerance: float, n_bins: int,
             thresholds=None) -> ROC:
    """TPR and FPR of the detections kept at each probability threshold.

    FPR divides false detections by the bins left after removing the matched
    truths, so both rates are nonincreasing in the threshold.
    """
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, 101)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    n_true = truth.times.size
    tpr = np.zeros(thresholds.size)
    fpr = np.zeros(thresholds.size)
    for i, th in enumerate(thresholds):
        keep = detections.probabilities >= th
        tp = match_detections(detections.times[keep], truth.times, tolerance)
        tpr[i] = tp / n_true if n_true else 0.0
        fpr[i] = (int(keep.sum()) - tp) / max(n_bins - tp, 1)
    return ROC(thresholds, tpr, fpr)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class TransientParams:
    amplitude: float = 1.0
    tau_rise: float = 0.02
    tau_decay: float = 0.4
    noise: float = 0.1
    drift: float = 0.2
    drift_period: float = 60.0
    baseline: float = 1.0
    min_gap: float = 0.25  # refractory gap between spikes, seconds


def transient(t: np.ndarray, p: TransientParams) -> np.ndarray:
    """Double-exponential transient with unit peak, zero for t < 0."""
    t = np.asarray(t, dtype=np.float64)
    shape = lambda u: np.exp(-u / p.tau_decay) - np.exp(-u / p.tau_rise)
    t_peak = (p.tau_decay * p.tau_rise / (p.tau_decay - p.tau_rise)) * math.log(p.tau_decay / p.tau_rise)
    peak = shape(t_peak)
    return np.where(t >= 0, shape(np.maximum(t, 0.0)) / peak, 0.0)


def synth_calcium(rng: np.random.Generator, duration: float, sample_rate: float = 60.0, rate: float = 0.5,
                  params: TransientParams = TransientParams(), neuropil_ratio: float | None = None):
    """Poisson spikes convolved with a transient, plus slow drift and white noise.

    Spikes closer than ``params.min_gap`` to their predecessor are dropped.
    When ``neuropil_ratio`` is given, a neuropil signal is generated and
    ratio * neuropil is added to the trace.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    count = rng.poisson(rate * duration)
    raw = np.sort(rng.uniform(0.0, duration, size=count))
    spikes = []
    for s in raw:
        if not spikes or s - spikes[-1] >= params.min_gap:
            spikes.append(s)
    spikes = np.array(spikes)
    clean = np.zeros(n)
    for s in spikes:
        clean += params.amplitude * transient(t - s, params)
    phase = rng.uniform(0, 2 * np.pi)
    drift = params.baseline + params.drift * np.sin(2 * np.pi * t / params.drift_period + phase)
    values = clean + drift + params.noise * rng.standard_normal(n)
    neuropil = None
    if neuropil_ratio is not None:
        neuropil = 0.5 + 0.3 * np.sin(2 * np.pi * t / 17.0 + rng.uniform(0, 2 * np.pi)) \
            + 0.05 * rng.standard_normal(n)
        values = values + neuropil_ratio * neuropil
    return FluorescenceTrace(values, sample_rate, neuropil), SpikeTrain(spikes)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class CalciumTrainConfig:
    max_windows: int = 3000
    direct_epochs: int = 10
    decoder_epochs: int = 3
    joint_epochs: int = 3
    gamma: float = 100.0
    lr_encoder: float = 1e-4
    lr_decoder: float = 1e-3
    delta: float = 1.0
    batch_size: int = 64
    seed: int = 0


def train_window_models(trace: FluorescenceTrace, spikes: SpikeTrain, cfg: WindowConfig,
                        tcfg: CalciumTrainConfig = CalciumTrainConfig(), log=None, dtype=np.float32):
    """One model per window length: full encoder-decoder for short windows, encoder only for long ones."""
    from .friednet import FriedTrainConfig, TrainData, train_direct, train_unknown_kernel
    from .harness import TAG_CALCIUM, TAG_INIT, TAG_SHUFFLE, substream

    models = []
    plan = [(w, cfg.k_short, True) for w in cfg.short] + [(w, cfg.k_long, False) for w in cfg.long]
    for idx, (W, K, full) in enumerate(plan):
        ws = make_windows(trace.values, spikes.times, trace.sample_rate, W, K, cfg.step, training=True)
        if ws.inputs.shape[0] == 0:
            raise ValueError(f"no training windows of length {W} contain a spike")
        pick = substream(tcfg.seed, TAG_CALCIUM, idx, W)
        if ws.inputs.shape[0] > tcfg.max_windows:
            keep = np.sort(pick.choice(ws.inputs.shape[0], tcfg.max_windows, replace=False))
        else:
            keep = np.arange(ws.inputs.shape[0])
        data = TrainData(ws.inputs[keep], ws.labels[keep], ws.inputs[keep])
        enc = Encoder.create(W, K, substream(tcfg.seed, TAG_INIT, TAG_CALCIUM, idx), dtype=dtype)
        rng = substream(tcfg.seed, TAG_SHUFFLE, TAG_CALCIUM, idx)
        train_direct(enc, data, tcfg.direct_epochs, tcfg.lr_encoder, tcfg.batch_size, rng, log)
        if full:
            dec = calcium_decoder(W, tcfg.delta, substream(tcfg.seed, TAG_INIT, TAG_CALCIUM, idx, 1), dtype)
            fc = FriedTrainConfig(gamma=tcfg.gamma, lr_encoder=tcfg.lr_encoder, lr_decoder=tcfg.lr_decoder,
                                  batch_size=tcfg.batch_size, decoder_epochs=tcfg.decoder_epochs,
                                  joint_epochs=tcfg.joint_epochs, seed=tcfg.seed + idx, amplitudes="ls")
            train_unknown_kernel(enc, dec, data, fc, log, skip_direct=True)
        models.append(WindowModel(W, K, enc))
    return models
