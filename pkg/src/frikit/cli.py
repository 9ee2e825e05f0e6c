"""Command-line experiment runner.

Every command takes an optional flat JSON config (``--config``) plus
``--set key=value`` overrides; ``seed`` must be given one way or the other.
Result files depend only on (config, seed); wall-clock timings go to a
separate ``timing.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .kernels import EMOMS, ESpline, emoms_coeffs, exp_repro_coeffs
from .nn import checkpoint
from .signal_model import DiracStream, SampleSet, SamplingConfig, breakdown_psnr, first_ratio_zero

log = logging.getLogger("frikit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

METHODS = ("prony-cadzow", "prony-pwgd", "unfolded", "friednet-encoder", "friednet", "friednet-finetune",
           "calcium-detect")
LEARNED = ("unfolded", "friednet-encoder", "friednet", "friednet-finetune")


class ConfigError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class ExperimentConfig:
    seed: int | None = None
    method: str = "prony-cadzow"
    kernel: str = "emoms"
    kernel_mode: str = "known"  # FRIED-Net decoder: "known" or "unknown"
    P: int = 20
    N: int = 21
    K: int = 2
    tau: float = 1.0
    psnr: list = field(default_factory=lambda: [20.0])
    dt0: list = field(default_factory=lambda: [0.01])
    t0: float = 0.1
    J: int = 200
    train_size: int = 10000
    iterations: int = 10
    pwgd_delta: float = 0.9999
    unfolded_epochs: int = 30
    unfolded_lr: float = 2e-4
    direct_epochs: int = 10
    decoder_epochs: int = 150
    joint_epochs: int = 5
    lr_encoder: float = 1e-4
    lr_decoder: float = 3e-5
    gamma: float | None = None  # 1 with a known kernel, 100 with an unknown one
    delta: float = 1.0 / 64
    amplitude_scale: float = 1.0
    kernel_scale: float = 1.0
    finetune_steps: int = 50
    # calcium
    duration: float = 240.0
    sample_rate: float = 60.0
    spike_rate: float = 0.5
    noise: float = 0.1
    neuropil_ratio: float = 0.7
    calcium_windows: int = 3000
    calcium_direct_epochs: int = 10
    calcium_decoder_epochs: int = 3
    calcium_joint_epochs: int = 3
    threshold: float = 0.0
    output: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("seed: required (no wall-clock seeding)")
        if self.method not in METHODS:
            raise ConfigError(f"method: {self.method!r} is not one of {', '.join(METHODS)}")
        if self.kernel not in ("emoms", "espline"):
            raise ConfigError(f"kernel: {self.kernel!r} is not 'emoms' or 'espline'")
        if self.kernel_mode not in ("known", "unknown"):
            raise ConfigError(f"kernel_mode: {self.kernel_mode!r} is not 'known' or 'unknown'")
        if self.kernel == "espline" and self.method in LEARNED:
            raise ConfigError("kernel: learned methods need a real kernel; use 'emoms'")
        for name in ("psnr", "dt0"):
            if not getattr(self, name):
                raise ConfigError(f"{name}: list must be nonempty")
        if any(d <= 0 for d in self.dt0):
            raise ConfigError("dt0: values must be positive")
        for name in ("J", "K", "N", "P", "train_size", "iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be at least 1")
        if self.N < 2 * self.K or self.P < 2 * self.K - 1:
            raise ConfigError(f"K: {self.K} Diracs need N >= 2K and P >= 2K - 1")
        return self

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def loss_weight(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return 100.0 if self.kernel_mode == "unknown" else 1.0

    @property
    def sampling(self) -> SamplingConfig:
        return SamplingConfig(self.N, self.tau)


FIELD_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value, where: str):
    if name not in FIELD_TYPES:
        raise ConfigError(f"{where}: unknown key {name!r}")
    default = ExperimentConfig().as_dict()[name]
    try:
        if isinstance(default, list):
            items = value if isinstance(value, list) else [v for v in str(value).split(",") if v.strip()]
            return [float(v) for v in items]
        if name == "gamma":
            return float(value)
        if name == "seed" or isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: bad value {value!r} for {name!r}") from None


def load_config(path: str | None, overrides: list[str]) -> ExperimentConfig:
    values = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for k, v in raw.items():
            values[k] = _coerce(k, v, f"{path}: key {k!r}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item}: expected key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = _coerce(k.strip(), v.strip(), f"--set {item}")
    return ExperimentConfig(**values).validate()


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# building blocks


def make_kernel(cfg: ExperimentConfig):
    if cfg.kernel == "emoms":
        k = EMOMS(cfg.P)
        return k, emoms_coeffs(cfg.P, cfg.N)
    ref = EMOMS(cfg.P)
    k = ESpline.from_frequencies(ref.omega0, ref.lam, cfg.P)
    return k, exp_repro_coeffs(k, cfg.P, ref.omega0, ref.lam, cfg.N)


def model_key(cfg: ExperimentConfig, psnr: float) -> dict:
    keep = ["method", "kernel", "kernel_mode", "P", "N", "K", "tau", "train_size", "seed", "amplitude_scale",
            "kernel_scale", "delta", "gamma"]
    if cfg.method == "unfolded":
        keep += ["unfolded_epochs", "unfolded_lr"]
    else:
        keep += ["direct_epochs", "decoder_epochs", "joint_epochs", "lr_encoder", "lr_decoder"]
    key = {k: cfg.as_dict()[k] for k in keep}
    # the finetuned variant reuses the plain FRIED-Net model
    if cfg.method == "friednet-finetune":
        key["method"] = "friednet"
    key.update(psnr=float(psnr), gamma=cfg.loss_weight, version=__version__)
    return key


def _cached(out: Path, key: dict, build, restore):
    """Load a model from the cache keyed by ``key``, or build and store it."""
    digest = content_hash(key)
    ckpt, meta = out / "models" / f"{digest}.frik", out / "models" / f"{digest}.json"
    if ckpt.exists() and meta.exists():
        try:
            if json.loads(meta.read_text()) != key:
                raise checkpoint.CheckpointError("metadata does not match the requested model")
            return restore(checkpoint.load(ckpt)), digest
        except (checkpoint.CheckpointError, KeyError, ValueError, json.JSONDecodeError) as exc:
            warnings.warn(f"model cache {digest} unusable ({exc}); retraining")
    tensors, model = build()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(ckpt, tensors)
    meta.write_text(json.dumps(key, sort_keys=True, indent=1) + "\n")
    return model, digest


def train_model(cfg: ExperimentConfig, psnr: float, out: Path):
    """Train (or fetch from cache) the model ``cfg.method`` needs at one PSNR."""
    from .friednet import (Decoder, Encoder, FriedTrainConfig, TrainData, TrainLog, train_direct,
                           train_known_kernel, train_unknown_kernel)
    from .harness import TAG_INIT, TAG_SHUFFLE, substream, training_batch
    from .spectral import build_toeplitz, default_M, moments_batch, true_filter
    from .unfolded import init_unfolded, train_unfolded

    kernel, coeffs = make_kernel(cfg)
    key = model_key(cfg, psnr)
    sc = cfg.sampling

    def data():
        return training_batch(cfg.seed, cfg.train_size, cfg.K, kernel, sc, psnr, cfg.amplitude_scale,
                              cfg.kernel_scale)

    if cfg.method == "unfolded":
        def build():
            tb = data()
            net = init_unfolded(cfg.P, cfg.K)
            X = build_toeplitz(moments_batch(tb.noisy, coeffs), net.M)
            h = np.stack([true_filter(t, coeffs.lam, sc.T) for t in tb.locations])
            losses = train_unfolded(net, X, h, cfg.unfolded_epochs, cfg.unfolded_lr, seed=cfg.seed)
            log.info("unfolded psnr=%g final loss %.6g", psnr, losses[-1] if losses else float("nan"))
            return net.named_params(), net

        def restore(arrays):
            net = init_unfolded(cfg.P, cfg.K, default_M(cfg.P))
            net.load_params(arrays)
            return net

        return _cached(out, key, build, restore)

    def fresh():
        enc = Encoder.create(cfg.N, cfg.K, substream(cfg.seed, TAG_INIT, 1), dtype=np.float32)
        if cfg.kernel_mode == "unknown":
            dec = Decoder.learnable(float(cfg.N), cfg.delta, sc.T, substream(cfg.seed, TAG_INIT, 2), np.float64)
        else:
            dec = Decoder.fixed(kernel, cfg.delta, sc.T, np.float32)
        return enc, dec

    def build():
        tb = data()
        td = TrainData(tb.noisy, tb.locations, tb.clean if cfg.kernel_mode == "known" else tb.noisy, tb.amplitudes)
        enc, dec = fresh()
        tl = TrainLog()
        fc = FriedTrainConfig(gamma=cfg.loss_weight, lr_encoder=cfg.lr_encoder, lr_decoder=cfg.lr_decoder,
                              direct_epochs=cfg.direct_epochs, decoder_epochs=cfg.decoder_epochs,
                              joint_epochs=cfg.joint_epochs, seed=cfg.seed,
                              amplitudes="true" if cfg.kernel_mode == "known" else "ls")
        if cfg.method == "friednet-encoder":
            train_direct(enc, td, cfg.direct_epochs, cfg.lr_encoder, fc.batch_size,
                         substream(cfg.seed, TAG_SHUFFLE, 0), tl)
        elif cfg.kernel_mode == "known":
            train_known_kernel(enc, dec, td, fc, tl)
        else:
            train_unknown_kernel(enc, dec, td, fc, tl)
        tensors = {f"encoder.{k}": v for k, v in enc.named_params().items()}
        tensors["decoder.d"] = dec.d.data
        return tensors, (enc, dec)

    def restore(arrays):
        enc, dec = fresh()
        enc.load_params({k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")})
        dec.d.data = np.asarray(arrays["decoder.d"], dtype=dec.d.dtype)
        return enc, dec

    return _cached(out, key, build, restore)


def method_for(cfg: ExperimentConfig, model):
    """Batch method mapping noisy samples (J, N) to a list of location arrays."""
    from .friednet import finetune_datum
    from .harness import encoder_method, prony_method
    from .spectral import cadzow, default_M, pwgd

    kernel, coeffs = make_kernel(cfg)
    T = cfg.sampling.T
    if cfg.method == "prony-cadzow":
        return prony_method(lambda X: cadzow(X, cfg.K, cfg.iterations), coeffs, cfg.K, default_M(cfg.P), T, cfg.tau)
    if cfg.method == "prony-pwgd":
        d = cfg.pwgd_delta
        return prony_method(lambda X: pwgd(X, cfg.K, d, d, cfg.iterations), coeffs, cfg.K, default_M(cfg.P), T,
                            cfg.tau)
    if cfg.method == "unfolded":
        return prony_method(lambda X: model.denoise(X.astype(model.dtype)), coeffs, cfg.K, model.M, T, cfg.tau)
    enc, dec = model
    base = encoder_method(enc)
    if cfg.method != "friednet-finetune":
        return base

    def refine(noisy):
        out = []
        for t, y in zip(base(noisy), noisy):
            t_new, _ = finetune_datum(t, dec, y, cfg.finetune_steps)
            out.append(np.mod(t_new + cfg.tau / 2, cfg.tau) - cfg.tau / 2)
        return out

    return refine


# ---------------------------------------------------------------------------
# file output


def fmt(x: float) -> str:
    return repr(float(x))


def write_grid(path: Path, rows, cols, values) -> None:
    with open(path, "w") as fh:
        fh.write("psnr," + ",".join(fmt(c) for c in cols) + "\n")
        for r, line in zip(rows, values):
            fh.write(fmt(r) + "," + ",".join(fmt(v) for v in line) + "\n")


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n")


def run_experiment(cfg: ExperimentConfig, out: Path) -> dict:
    from .harness import evaluate_cell, pair_batch

    if cfg.method == "calcium-detect":
        raise ConfigError("method: calcium-detect runs through the calcium-detect command")
    out.mkdir(parents=True, exist_ok=True)
    kernel, _ = make_kernel(cfg)
    cells, timing = [], []
    for psnr in cfg.psnr:
        start = time.perf_counter()
        model, digest = train_model(cfg, psnr, out) if cfg.method in LEARNED else (None, None)
        method = method_for(cfg, model)
        timing.append({"psnr": psnr, "stage": "train", "seconds": time.perf_counter() - start, "model": digest})
        for dt0 in cfg.dt0:
            start = time.perf_counter()
            batch = pair_batch(cfg.seed, cfg.J, dt0, kernel, cfg.sampling, psnr, cfg.t0)
            cell = evaluate_cell(method, batch, psnr, dt0, cfg.tau)
            if not (math.isfinite(cell.sd_mean) or cell.misses == cfg.J * cfg.K):
                raise NumericalFailure(f"non-finite SD at psnr={psnr}, dt0={dt0}")
            cells.append(cell.as_dict())
            timing.append({"psnr": psnr, "dt0": dt0, "stage": "eval", "seconds": time.perf_counter() - start})
            log.info("psnr=%g dt0=%g sd_mean=%.4g", psnr, dt0, cell.sd_mean)
    grid = [[c["sd_mean"] for c in cells if c["psnr"] == p] for p in cfg.psnr]
    write_grid(out / "sd_mean.csv", cfg.psnr, cfg.dt0, grid)
    write_grid(out / "sd_median.csv", cfg.psnr, cfg.dt0,
               [[c["sd_median"] for c in cells if c["psnr"] == p] for p in cfg.psnr])
    summary = {"config_hash": content_hash(cfg.as_dict()), "cells": cells}
    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", timing)
    return summary


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: ExperimentConfig, out: Path, args) -> dict:
    from .harness import make_batch, random_streams, substream

    kernel, _ = make_kernel(cfg)
    rng = substream(cfg.seed, 0)
    t, a = random_streams(rng, 1, cfg.K, cfg.tau)
    b = make_batch(t, a, kernel, cfg.sampling, cfg.psnr[0], rng)
    out.mkdir(parents=True, exist_ok=True)
    DiracStream(cfg.tau, b.locations[0], b.amplitudes[0]).to_csv(out / "stream.csv")
    SampleSet(b.noisy[0], cfg.sampling).to_csv(out / "samples.csv")
    SampleSet(b.clean[0], cfg.sampling).to_csv(out / "clean.csv")
    return {"stream": str(out / "stream.csv"), "samples": str(out / "samples.csv")}


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, args) -> dict:
    from .spectral import amplitudes_ls

    if not args.samples:
        raise ConfigError("--samples: required for reconstruct")
    samples = SampleSet.from_csv(args.samples, cfg.tau)
    if samples.values.size != cfg.N:
        raise ConfigError(f"N: config says {cfg.N} but {args.samples} holds {samples.values.size} samples")
    model = train_model(cfg, cfg.psnr[0], out)[0] if cfg.method in LEARNED else None
    kernel, _ = make_kernel(cfg)
    est = method_for(cfg, model)(samples.values[None, :])[0]
    if est is None:
        raise NumericalFailure("root finding failed on the given samples")
    a, _ = amplitudes_ls(est, samples, kernel)
    out.mkdir(parents=True, exist_ok=True)
    order = np.argsort(est)
    DiracStream(cfg.tau, est[order], np.real(a)[order]).to_csv(out / "reconstruction.csv")
    return {"locations": [float(x) for x in est[order]]}


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> dict:
    from .friednet import kernel_correlation

    if cfg.method not in LEARNED:
        raise ConfigError(f"method: {cfg.method!r} has nothing to train")
    result = {}
    for psnr in cfg.psnr:
        model, digest = train_model(cfg, psnr, out)
        entry = {"psnr": psnr, "model": digest}
        if cfg.method != "unfolded" and cfg.kernel_mode == "unknown":
            _, dec = model
            kernel, _ = make_kernel(cfg)
            entry["kernel_correlation"] = kernel_correlation(dec, None, kernel)
            pl = dec.kernel()
            xs = cfg.delta * np.arange(pl.coefficients.size + 1)
            with open(out / f"kernel_{digest}.csv", "w") as fh:
                fh.write("t,phi\n")
                for x, v in zip(xs, pl(xs)):
                    fh.write(f"{fmt(x)},{fmt(v)}\n")
        result.setdefault("models", []).append(entry)
    write_json(out / "train.json", result)
    return result


def cmd_montecarlo(cfg: ExperimentConfig, out: Path, args) -> dict:
    return run_experiment(cfg, out)


def cmd_breakdown(cfg: ExperimentConfig, out: Path, args) -> dict:
    lam = EMOMS(cfg.P).lam
    ratios = np.asarray(cfg.dt0, dtype=np.float64) / cfg.sampling.T
    values = breakdown_psnr(cfg.P, lam, ratios)
    out.mkdir(parents=True, exist_ok=True)
    bad = []
    with open(out / "breakdown.csv", "w") as fh:
        fh.write("dt0,dt0_over_T,psnr_db\n")
        for d, r, v in zip(cfg.dt0, ratios, values):
            if not math.isfinite(v):
                bad.append(d)
            fh.write(f"{fmt(d)},{fmt(r)},{fmt(v)}\n")
    for d in bad:
        log.warning("breakdown PSNR undefined at dt0=%g", d)
    return {"points": len(cfg.dt0), "undefined": bad, "first_zero_over_T": first_ratio_zero(cfg.P, lam)}


def _calcium_models(cfg: ExperimentConfig, out: Path, wcfg):
    from .calcium import CalciumTrainConfig, synth_calcium, train_window_models
    from .harness import TAG_CALCIUM, substream
    from .calcium import TransientParams, WindowModel
    from .friednet import Encoder

    tcfg = CalciumTrainConfig(cfg.calcium_windows, cfg.calcium_direct_epochs, cfg.calcium_decoder_epochs,
                              cfg.calcium_joint_epochs, seed=cfg.seed)
    key = {"calcium": dataclasses.asdict(tcfg), "window": dataclasses.asdict(wcfg), "duration": cfg.duration,
           "rate": cfg.sample_rate, "spike_rate": cfg.spike_rate, "noise": cfg.noise, "version": __version__}
    plan = [(w, wcfg.k_short) for w in wcfg.short] + [(w, wcfg.k_long) for w in wcfg.long]

    def build():
        trace, spikes = synth_calcium(substream(cfg.seed, TAG_CALCIUM, 0), cfg.duration, cfg.sample_rate,
                                      cfg.spike_rate, TransientParams(noise=cfg.noise))
        models = train_window_models(trace, spikes, wcfg, tcfg)
        tensors = {}
        for i, m in enumerate(models):
            tensors.update({f"m{i}.{k}": v for k, v in m.encoder.named_params().items()})
        return tensors, models

    def restore(arrays):
        models = []
        for i, (W, K) in enumerate(plan):
            enc = Encoder.create(W, K, np.random.default_rng(0), dtype=np.float32)
            enc.load_params({k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith(f"m{i}.")})
            models.append(WindowModel(W, K, enc))
        return models

    return _cached(out, key, build, restore)


def cmd_calcium(cfg: ExperimentConfig, out: Path, args) -> dict:
    from .calcium import FluorescenceTrace, TransientParams, WindowConfig, double_consistency_detect
    from .calcium import preprocess_trace, synth_calcium
    from .harness import TAG_CALCIUM, substream

    wcfg = WindowConfig()
    out.mkdir(parents=True, exist_ok=True)
    if args.trace:
        trace = FluorescenceTrace.from_csv(args.trace)
    else:
        trace, truth = synth_calcium(substream(cfg.seed, TAG_CALCIUM, 1), cfg.duration, cfg.sample_rate,
                                     cfg.spike_rate, TransientParams(noise=cfg.noise), cfg.neuropil_ratio)
        trace.to_csv(out / "trace.csv")
        truth.to_csv(out / "truth.txt")
    trace = preprocess_trace(trace, cfg.neuropil_ratio)
    models, digest = _calcium_models(cfg, out, wcfg)
    det = double_consistency_detect(models, trace, wcfg, cfg.threshold)
    det.to_csv(out / "detections.csv")
    hist = det.histogram
    with open(out / "histogram.csv", "w") as fh:
        fh.write("time,probability\n")
        for i, p in enumerate(hist.probability.tolist()):
            fh.write(f"{fmt(i * hist.T)},{fmt(p)}\n")
    summary = {"model": digest, "detections": int(det.times.size), "bins": int(hist.counts.size)}
    write_json(out / "calcium.json", summary)
    return summary


def cmd_roc(cfg: ExperimentConfig, out: Path, args) -> dict:
    from .calcium import Detections, SpikeTrain, roc_eval

    detections = args.detections or str(out / "detections.csv")
    truth = args.truth or str(out / "truth.txt")
    try:
        rows = np.loadtxt(detections, delimiter=",", skiprows=1, ndmin=2)
        spikes = SpikeTrain.from_csv(truth)
    except OSError as exc:
        raise ConfigError(f"eval-roc: {exc}") from None
    n_bins = args.bins or int(round(cfg.duration * cfg.sample_rate))
    det = Detections(rows[:, 0], rows[:, 1], None)
    roc = roc_eval(det, spikes, 2.0 / cfg.sample_rate, n_bins)
    out.mkdir(parents=True, exist_ok=True)
    roc.to_csv(out / "roc.csv")
    summary = {"tpr_at_fpr_0.1": roc.best_tpr(0.1), "truth": int(spikes.times.size)}
    write_json(out / "roc.json", summary)
    return summary


COMMANDS = {
    "synth": cmd_synth,
    "reconstruct": cmd_reconstruct,
    "train": cmd_train,
    "montecarlo": cmd_montecarlo,
    "breakdown-map": cmd_breakdown,
    "calcium-detect": cmd_calcium,
    "eval-roc": cmd_roc,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frikit", description="Sampling and recovery of Dirac streams.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat JSON file of settings")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
        sp.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        sp.add_argument("--out", help="output directory (overrides the 'output' setting)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "reconstruct":
            sp.add_argument("--samples", help="sample file, one value per line")
        if name == "calcium-detect":
            sp.add_argument("--trace", help="CSV with header time,fluorescence[,neuropil]")
        if name == "eval-roc":
            sp.add_argument("--detections")
            sp.add_argument("--truth")
            sp.add_argument("--bins", type=int, help="number of trace samples")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = list(args.set) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg.output)
        result = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
